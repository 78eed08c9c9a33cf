"""Multi-user THz 360-degree streaming environment with macro/primitive decisions.

Each agent (user) takes a macro-action per chunk request (per-tile bitrates)
and the joint agent takes a primitive action per slot (beams). One call to
``StreamingEnv.step`` simulates one slot in this order:

  1. primitive observation (predicted blockage) is already available
  2. the given beams are applied
  3. rates are realized with the ACTUAL blockage of the true head poses
  4. download and buffer states advance
  5. finished chunks are scored; both rewards are computed
  6. users whose waiting time has elapsed issue their next request

A chunk's extrinsic reward is emitted by the step of the slot that delivers
its final bits. Its next request happens ``1 + waiting_time`` slots later.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .fusion import FusionConfig, TilePrediction, Tiling, actual_tiles, predict_tiles
from .phy import (BeamSet, Geometry, HeadPose, PhyConfig, all_channels, all_user_rates,
                  nonblocked_aps, nonblocked_mask, project_power)
from .streaming import (QoEConfig, QoEReport, QualitySelection, UserStreamState, VideoConfig,
                        chunk_size_bits, qoe_chunk, rebuffering_delay, round_bitrate,
                        waiting_time)


@dataclass(frozen=True)
class RewardConfig:
    gamma: float = 0.99
    lambda_intr: float = 2.0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.lambda_intr < 0:
            raise ValueError("lambda_intr must be non-negative")


@dataclass
class MacroObservation:
    upsilon: np.ndarray  # predicted-tile indicator
    chi: np.ndarray  # averaged fused tile features
    prev_quality: float  # mean transmitted level of the previous chunk
    buffer: int  # buffer at the request slot

    def vector(self, n_levels: int, buffer_threshold: int) -> np.ndarray:
        return np.concatenate([self.upsilon, self.chi,
                               [self.prev_quality / n_levels,
                                self.buffer / max(buffer_threshold, 1)]])


@dataclass
class PrimObservation:
    rho: np.ndarray  # predicted non-blocked indicator per AP
    delta_rem: float
    delta_time: int

    def vector(self, rem_scale: float, time_scale: float) -> np.ndarray:
        return np.concatenate([self.rho, [self.delta_rem / rem_scale,
                                          self.delta_time / time_scale]])


@dataclass
class MacroAction:
    nu: np.ndarray  # per-tile bitrate, 0 outside the predicted set


@dataclass
class Completion:
    user: int
    chunk: int
    t_req: int
    td: int
    wait: int
    report: QoEReport
    overlap: float


@dataclass
class StepResult:
    t: int
    rates: np.ndarray
    delta_rem: np.ndarray  # remaining bits at the start of the slot
    r_extr: float
    r_intr: float
    completions: list
    macro_obs: np.ndarray  # (U, d) observation each agent's macro-action started from
    macro_act: np.ndarray  # (U, N) raw actions in force during the slot
    next_macro_obs: np.ndarray
    cum_reward: np.ndarray  # (U,)
    duration: np.ndarray  # (U,) int
    completed: np.ndarray  # (U,) bool
    done: bool
    requests: list  # users that issue a request at t + 1


# -------------------------------------------------------------- predictors

Predictor = Callable[[int, np.ndarray, int, int], np.ndarray]


def oracle_predictor(user: int, trace: np.ndarray, frame: int, q_pred: int) -> np.ndarray:
    """True future poses for frames ``frame+1 .. frame+q_pred``."""
    idx = (frame + 1 + np.arange(q_pred)) % len(trace)
    return trace[idx].copy()


def persistence_predictor(user: int, trace: np.ndarray, frame: int, q_pred: int) -> np.ndarray:
    return np.repeat(trace[frame % len(trace)][None], q_pred, axis=0)


# -------------------------------------------------------------- operations


def build_macro_obs(user: int, tile_pred: TilePrediction, state: UserStreamState,
                    prev_trans: Optional[float] = None) -> MacroObservation:
    """``prev_trans`` is the mean level sent for the previous chunk (1 before any)."""
    prev = 1.0 if prev_trans is None else prev_trans
    return MacroObservation(tile_pred.indicator.copy(), np.asarray(tile_pred.avg_features, float),
                            float(prev), int(state.buffer_slots))


def build_prim_obs(user: int, predicted_pose: HeadPose, state: UserStreamState,
                   geo: Geometry) -> PrimObservation:
    nb = nonblocked_aps(predicted_pose, user, geo)
    rho = np.zeros(geo.n_aps)
    rho[sorted(nb)] = 1.0
    return PrimObservation(rho, float(state.delta_rem), int(state.delta_time))


def update_stream_state(state: UserStreamState, delivered_bits: float, t: int,
                        vc: VideoConfig) -> UserStreamState:
    """Advance Δ^rem and Δ^time past slot ``t`` in which ``delivered_bits`` arrived."""
    if state.delta_rem <= 0:
        return state
    rem = max(state.delta_rem - delivered_bits, 0.0)
    if rem > 0:
        return replace(state, delta_rem=rem, delta_time=state.delta_time - 1)
    td = t - state.t_req + 1
    return replace(state, delta_rem=0.0,
                   delta_time=max(state.buffer_slots - td, 0) + vc.chunk_slots)


def apply_macro_action(raw, tile_pred: TilePrediction,
                       vc: VideoConfig) -> tuple[MacroAction, QualitySelection]:
    raw = np.clip(np.asarray(raw, dtype=float), -1.0, 1.0)
    lo, hi = vc.quality_bitrates[0], vc.quality_bitrates[-1]
    nu = lo + (raw + 1.0) / 2.0 * (hi - lo)
    nu = np.where(tile_pred.indicator > 0, nu, 0.0)
    levels = np.array([round_bitrate(v, vc) if v > 0 else 0 for v in nu], dtype=int)
    return MacroAction(nu), QualitySelection(levels)


def beam_scale(phy: PhyConfig, n_users: int) -> float:
    """Per-element amplitude giving a unit-modulus beam the power P^max / U."""
    return math.sqrt(phy.p_max / (n_users * phy.n_tx))


def apply_prim_action(raw, n_users: int, n_aps: int, phy: PhyConfig) -> BeamSet:
    raw = np.asarray(raw, dtype=float).reshape(n_users, n_aps, phy.n_tx, 2)
    beams = (raw[..., 0] + 1j * raw[..., 1]) * beam_scale(phy, n_users)
    return project_power(BeamSet(beams), phy.p_max)


def extrinsic_reward(completions) -> float:
    return float(sum(c.report.qoe for c in completions))


def intrinsic_reward(rates, delta_rem, lambda_intr: float, slot_seconds: float) -> float:
    rates = np.asarray(rates, dtype=float)
    rem = np.asarray(delta_rem, dtype=float)
    return float(rates.sum() - lambda_intr * np.maximum(rem - slot_seconds * rates, 0.0).sum())


# -------------------------------------------------------------- environment


@dataclass
class Scenario:
    """Everything fixed across episodes.

    ``traces[u]`` holds user u's head poses per playback frame and
    ``saliency[u]`` the saliency frames (n_frames, H, W) of the watched video.
    """

    geometry: Geometry
    traces: list
    saliency: list
    phy: PhyConfig = field(default_factory=PhyConfig)
    video: VideoConfig = field(default_factory=VideoConfig)
    qoe: QoEConfig = field(default_factory=QoEConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    buffer_threshold: int = 30
    horizon: int = 153
    q_pred: Optional[int] = None

    def __post_init__(self):
        vc = self.video
        if vc.n_frames_per_chunk % vc.chunk_slots:
            raise ValueError("frames per chunk must be a multiple of slots per chunk")
        if len(self.traces) != self.geometry.n_users or len(self.saliency) != self.geometry.n_users:
            raise ValueError("one trace and one saliency stack per user required")
        if self.q_pred is None:
            F = vc.n_frames_per_chunk
            self.q_pred = F + F * self.buffer_threshold // vc.chunk_slots

    @property
    def tiling(self) -> Tiling:
        return Tiling(self.video.tile_rows, self.video.tile_cols)

    @property
    def frames_per_slot(self) -> int:
        return self.video.n_frames_per_chunk // self.video.chunk_slots

    @property
    def n_users(self) -> int:
        return self.geometry.n_users

    @property
    def n_aps(self) -> int:
        return self.geometry.n_aps

    @property
    def macro_obs_dim(self) -> int:
        return 2 * self.video.n_tiles + 2

    @property
    def prim_obs_dim(self) -> int:
        return self.n_aps + 2

    @property
    def prim_act_dim(self) -> int:
        return self.n_users * self.n_aps * 2 * self.phy.n_tx

    @property
    def max_chunk_bits(self) -> float:
        vc = self.video
        return vc.n_tiles * vc.quality_bitrates[-1] * vc.chunk_seconds


@dataclass
class _Runtime:
    state: UserStreamState
    buffer: int = 0  # buffer in slots at the start of the current slot
    chunks_done: int = 0
    next_req: Optional[int] = 0
    base_frame: int = 0  # playback frame when the last prediction was made
    pred: Optional[np.ndarray] = None  # poses for frames base+1 ..
    tile_pred: Optional[TilePrediction] = None
    selection: Optional[QualitySelection] = None
    chunk_bits: float = 0.0
    downloading: bool = False
    macro_obs: Optional[np.ndarray] = None
    macro_act: Optional[np.ndarray] = None
    macro_start: int = 0
    cum_reward: float = 0.0
    prev_trans: Optional[float] = None


class StreamingEnv:
    def __init__(self, scenario: Scenario, predictor: Predictor = oracle_predictor):
        self.sc = scenario
        self.predictor = predictor
        self.episode = -1
        self.t = 0
        self.users: list[_Runtime] = []

    # ---- time / pose helpers

    def playback_frame(self, u: int) -> int:
        rt = self.users[u]
        return rt.chunks_done * self.sc.video.n_frames_per_chunk - rt.buffer * self.sc.frames_per_slot

    def actual_pose(self, u: int) -> np.ndarray:
        tr = self.sc.traces[u]
        return tr[self.playback_frame(u) % len(tr)]

    def predicted_pose(self, u: int, frame: Optional[int] = None) -> np.ndarray:
        rt = self.users[u]
        frame = self.playback_frame(u) if frame is None else frame
        if frame <= rt.base_frame:
            tr = self.sc.traces[u]
            return tr[frame % len(tr)]
        k = min(frame - rt.base_frame - 1, len(rt.pred) - 1)
        return rt.pred[k]

    # ---- episode control

    def reset(self) -> list[int]:
        """Start a new episode; every user requests its first chunk at t = 0."""
        self.episode += 1
        self.t = 0
        self.users = [_Runtime(UserStreamState(buffer_threshold=self.sc.buffer_threshold))
                      for _ in range(self.sc.n_users)]
        for u in range(self.sc.n_users):
            self._request(u)
        return self.pending()

    def pending(self) -> list[int]:
        """Users whose current request still needs a macro-action."""
        return [u for u, rt in enumerate(self.users) if rt.selection is None]

    def _request(self, u: int) -> None:
        sc, rt = self.sc, self.users[u]
        vc, F = sc.video, sc.video.n_frames_per_chunk
        frame = self.playback_frame(u)
        rt.base_frame = frame
        rt.pred = np.asarray(self.predictor(u, sc.traces[u], frame, sc.q_pred), dtype=float)
        c = rt.chunks_done
        chunk_frames = c * F + np.arange(F)
        poses = np.array([self.predicted_pose(u, f) for f in chunk_frames])
        sal = sc.saliency[u]
        sal_frames = sal[chunk_frames % len(sal)]
        gap = max(1, c - frame // F)
        rt.tile_pred = predict_tiles(sal_frames, poses, sc.tiling, sc.fusion, gap)
        rt.state = replace(rt.state, buffer_slots=rt.buffer, chunk_index=c, t_req=self.t,
                           delta_rem=0.0, delta_time=rt.buffer)
        rt.selection = None
        rt.macro_obs = build_macro_obs(u, rt.tile_pred, rt.state, rt.prev_trans).vector(
            vc.n_levels, sc.buffer_threshold)
        rt.macro_start = self.t
        rt.cum_reward = 0.0
        rt.next_req = None

    def set_macro_action(self, u: int, raw) -> QualitySelection:
        rt = self.users[u]
        if rt.selection is not None:
            raise RuntimeError(f"user {u} has no open request")
        _, sel = apply_macro_action(raw, rt.tile_pred, self.sc.video)
        rt.selection = sel
        rt.macro_act = np.clip(np.asarray(raw, dtype=float), -1.0, 1.0)
        rt.chunk_bits = chunk_size_bits(sel, self.sc.video)
        rt.state = replace(rt.state, delta_rem=rt.chunk_bits)
        rt.downloading = True
        return sel

    def set_selection(self, u: int, sel: QualitySelection) -> None:
        """Install a ready-made quality selection (heuristic policies).

        The stored raw action is the one ``apply_macro_action`` maps onto it.
        """
        rt = self.users[u]
        if rt.selection is not None:
            raise RuntimeError(f"user {u} has no open request")
        rates = np.asarray(self.sc.video.quality_bitrates, dtype=float)
        lv = np.asarray(sel.levels)
        nu = np.where(lv > 0, rates[np.maximum(lv, 1) - 1], rates[0])
        raw = 2 * (nu - rates[0]) / max(rates[-1] - rates[0], 1e-300) - 1
        rt.selection = QualitySelection(lv.copy())
        rt.macro_act = raw
        rt.chunk_bits = chunk_size_bits(rt.selection, self.sc.video)
        rt.state = replace(rt.state, delta_rem=rt.chunk_bits)
        rt.downloading = True

    def tile_prediction(self, u: int) -> TilePrediction:
        return self.users[u].tile_pred

    def predicted_channels(self) -> np.ndarray:
        phis = [self.predicted_pose(u)[1] for u in range(self.sc.n_users)]
        return all_channels(self.sc.geometry, self.sc.phy, facings=phis)

    def macro_obs(self, u: int) -> np.ndarray:
        return self.users[u].macro_obs

    def prim_obs(self) -> np.ndarray:
        """Joint normalized primitive observation at the current slot."""
        sc = self.sc
        rem_scale = sc.max_chunk_bits
        time_scale = sc.buffer_threshold + sc.video.chunk_slots
        parts = []
        for u in range(sc.n_users):
            th, ph = self.predicted_pose(u)
            ob = build_prim_obs(u, HeadPose(float(np.clip(th, 0, np.pi)), float(ph)),
                                self.users[u].state, sc.geometry)
            parts.append(ob.vector(rem_scale, time_scale))
        return np.concatenate(parts)

    def predicted_mask(self) -> np.ndarray:
        phis = [self.predicted_pose(u)[1] for u in range(self.sc.n_users)]
        return nonblocked_mask(phis, self.sc.geometry)

    def actual_mask(self) -> np.ndarray:
        phis = [self.actual_pose(u)[1] for u in range(self.sc.n_users)]
        return nonblocked_mask(phis, self.sc.geometry)

    def channels(self) -> np.ndarray:
        phis = [self.actual_pose(u)[1] for u in range(self.sc.n_users)]
        return all_channels(self.sc.geometry, self.sc.phy, facings=phis)

    # ---- transition

    def step(self, beams: BeamSet) -> StepResult:
        sc, vc = self.sc, self.sc.video
        if self.pending():
            raise RuntimeError(f"users {self.pending()} still need a macro-action")
        if self.t >= sc.horizon:
            raise RuntimeError("episode horizon exceeded; call reset()")
        t = self.t
        U = sc.n_users
        chans = self.channels()
        rates = all_user_rates(beams, chans, self.actual_mask(), sc.phy)
        rem0 = np.array([rt.state.delta_rem for rt in self.users])
        r_intr = intrinsic_reward(rates, rem0, sc.reward.lambda_intr, vc.slot_seconds)

        completions = []
        for u, rt in enumerate(self.users):
            was = rt.downloading
            rt.state = update_stream_state(rt.state, vc.slot_seconds * rates[u], t, vc)
            if rt.buffer > 0:
                rt.buffer -= 1
            if was and rt.state.delta_rem <= 0:
                completions.append(self._complete(u, t))
        r_extr = extrinsic_reward(completions)

        done = t + 1 >= sc.horizon
        obs = np.array([rt.macro_obs for rt in self.users])
        act = np.array([rt.macro_act for rt in self.users])
        cum = np.empty(U)
        dur = np.empty(U, dtype=int)
        for u, rt in enumerate(self.users):
            rt.cum_reward += sc.reward.gamma ** (t - rt.macro_start) * r_extr
            cum[u] = rt.cum_reward
            dur[u] = t - rt.macro_start + 1
        completed = np.array([done or rt.next_req == t + 1 for rt in self.users])

        self.t = t + 1
        requests = []
        if not done:
            for u, rt in enumerate(self.users):
                if rt.next_req == self.t:
                    self._request(u)
                    requests.append(u)
        next_obs = np.array([rt.macro_obs for rt in self.users])
        return StepResult(t, rates, rem0, r_extr, r_intr, completions, obs, act, next_obs,
                          cum, dur, completed, done, requests)

    def _complete(self, u: int, t: int) -> Completion:
        sc, vc, rt = self.sc, self.sc.video, self.users[u]
        st = rt.state
        td = t - st.t_req + 1
        F = vc.n_frames_per_chunk
        c = st.chunk_index
        frames = (c * F + np.arange(F)) % len(sc.traces[u])
        H, W = sc.saliency[u].shape[1:]
        fr, fcols = sc.fusion.footprint(sc.tiling)
        act_tiles = actual_tiles(sc.traces[u][frames], sc.tiling, fr, fcols, W, H,
                                 sc.fusion.kernel_sigma)
        rd = rebuffering_delay(td, st.buffer_slots)
        report = qoe_chunk(rt.selection, act_tiles, st.last_avg_quality, rd, sc.qoe)
        wt = waiting_time(st, td, vc)
        overlap = len(rt.tile_pred.pred_set & act_tiles) / len(act_tiles)
        rt.buffer += vc.chunk_slots
        rt.chunks_done += 1
        rt.downloading = False
        rt.next_req = t + 1 + wt
        rt.prev_trans = rt.selection.mean_sent_level() or 1.0
        rt.state = replace(st, last_avg_quality=report.avg_view_quality)
        return Completion(u, c, st.t_req, td, wt, report, overlap)


# -------------------------------------------------------------- episode log


def log_record(res: StepResult) -> dict:
    return {
        "t": res.t,
        "rates": [float(r) for r in res.rates],
        "delta_rem": [float(d) for d in res.delta_rem],
        "rewards": {"extrinsic": res.r_extr, "intrinsic": res.r_intr},
        "completions": [{"user": c.user, "chunk": c.chunk, "t_req": c.t_req, "td": c.td,
                         "wait": c.wait, "qoe": c.report.qoe,
                         "quality": c.report.avg_view_quality,
                         "spatial_var": c.report.spatial_var,
                         "temporal_switch": c.report.temporal_switch,
                         "rebuffer": c.report.rebuffer_slots, "overlap": c.overlap}
                        for c in res.completions],
    }


def write_log(fh, records) -> None:
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
