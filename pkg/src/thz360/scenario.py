"""Room layout, synthetic saliency videos and scenario assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import RewardConfig, Scenario
from .fusion import FusionConfig, pixel_directions
from .headpred import Persona, generate_traces
from .phy import Geometry, PhyConfig
from .streaming import QoEConfig, VideoConfig

ROOM = (10.0, 10.0, 4.0)
AP_POSITIONS = ((9.0, 1.0, 4.0), (5.0, 5.0, 4.0), (1.0, 9.0, 4.0))
USER_HEIGHT = 1.6


def grid_shape(n: int) -> tuple[int, int]:
    """Most square (rows, cols) split of the floor into ``n`` equal areas."""
    rows = int(math.floor(math.sqrt(n)))
    while n % rows:
        rows -= 1
    return rows, n // rows


def user_positions(n_users: int, room=ROOM, height: float = USER_HEIGHT) -> np.ndarray:
    """Centers of ``n_users`` equal rectangular floor areas."""
    rows, cols = grid_shape(n_users)
    dx, dy = room[0] / cols, room[1] / rows
    pos = [((c + 0.5) * dx, (r + 0.5) * dy, height) for r in range(rows) for c in range(cols)]
    return np.array(pos)


def layout(n_users: int = 6, ap_subset=None, phi_blocked: float = math.pi) -> Geometry:
    aps = np.array(AP_POSITIONS)
    if ap_subset is not None:
        aps = aps[list(ap_subset)]
    return Geometry(aps, user_positions(n_users), phi_blocked)


# ------------------------------------------------------------- saliency


@dataclass(frozen=True)
class SaliencyConfig:
    width: int = 48
    height: int = 24
    components: int = 2
    spread: float = 0.35
    drift: float = 0.02  # radians of longitude per frame


def synth_saliency(n_frames: int, cfg: SaliencyConfig, rng) -> np.ndarray:
    """Mixture-of-Gaussians saliency with centers drifting in longitude."""
    theta, phi = pixel_directions(cfg.width, cfg.height)
    th = rng.uniform(0.3 * math.pi, 0.7 * math.pi, cfg.components)
    ph = rng.uniform(0, 2 * math.pi, cfg.components)
    weight = rng.uniform(0.5, 1.0, cfg.components)
    direction = rng.choice([-1.0, 1.0], cfg.components)
    out = np.empty((n_frames, cfg.height, cfg.width))
    for k in range(n_frames):
        frame = np.zeros((cfg.height, cfg.width))
        for j in range(cfg.components):
            c = ph[j] + direction[j] * cfg.drift * k
            cosd = (np.cos(theta) * np.cos(th[j])
                    + np.sin(theta) * np.sin(th[j]) * np.cos(phi - c))
            ang = np.arccos(np.clip(cosd, -1.0, 1.0))
            frame += weight[j] * np.exp(-ang ** 2 / (2 * cfg.spread ** 2))
        out[k] = frame
    return out


def personas(n_users: int) -> list:
    """Users with different preferred viewing directions and turning habits."""
    out = []
    for k in range(n_users):
        ang = 2 * math.pi * k / max(n_users, 1)
        out.append(Persona(attractor=(math.pi / 2 + 0.4 * math.cos(2 * ang), ang),
                           drift=0.02, noise=0.04, spin=0.01 if k % 2 else -0.01))
    return out


@dataclass(frozen=True)
class ScenarioSpec:
    n_users: int = 6
    ap_subset: tuple | None = None
    n_videos: int = 4
    frames_per_video: int = 600
    horizon: int = 153
    buffer_threshold: int = 30


def build_scenario(spec: ScenarioSpec, phy: PhyConfig, video: VideoConfig, qoe: QoEConfig,
                   fusion: FusionConfig, reward: RewardConfig, sal_cfg: SaliencyConfig, rng,
                   traces=None, saliency=None):
    """Returns (scenario, traces dict, saliency per video).

    User u watches video ``u % n_videos``.
    """
    geo = layout(spec.n_users, spec.ap_subset)
    if saliency is None:
        saliency = [synth_saliency(spec.frames_per_video, sal_cfg, rng)
                    for _ in range(spec.n_videos)]
    if traces is None:
        traces = generate_traces(personas(spec.n_users), spec.n_videos,
                                 spec.frames_per_video, rng)
    vids = [u % spec.n_videos for u in range(spec.n_users)]
    sc = Scenario(geo, [traces[(u, v)] for u, v in enumerate(vids)],
                  [saliency[v] for v in vids], phy=phy, video=video, qoe=qoe, fusion=fusion,
                  reward=reward, buffer_threshold=spec.buffer_threshold, horizon=spec.horizon)
    return sc, traces, saliency


def tiny_scenario(rng, horizon: int = 40) -> Scenario:
    """2 users, 2 APs, 2-element ULAs, 2x2 tiles, two quality levels."""
    geo = Geometry(np.array([AP_POSITIONS[0], AP_POSITIONS[2]]),
                   np.array([(2.5, 5.0, USER_HEIGHT), (7.5, 5.0, USER_HEIGHT)]))
    phy = PhyConfig(n_tx=2, n_rx=1)
    video = VideoConfig(tile_rows=2, tile_cols=2, n_frames_per_chunk=5, chunk_slots=5,
                        quality_bitrates=(28e6, 48e6))
    sal_cfg = SaliencyConfig(width=8, height=4, components=1)
    n_frames = 400
    sal = [synth_saliency(n_frames, sal_cfg, rng) for _ in range(2)]
    tr = generate_traces(personas(2), 1, n_frames, rng)
    return Scenario(geo, [tr[(0, 0)], tr[(1, 0)]], sal, phy=phy, video=video,
                    buffer_threshold=10, horizon=horizon)
