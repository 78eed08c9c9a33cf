"""Experiment plumbing: predictors, evaluation policies, metrics and artifacts."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .baselines import (ReactiveBlockage, default_prior, priority_bitrate, throughput_estimate,
                        wmmse_beamforming)
from .config import ExperimentConfig
from .env import (StreamingEnv, apply_prim_action, log_record, oracle_predictor,
                  persistence_predictor)
from .hddpg import ActorCritic, LearnedPolicy, RandomPolicy, build_nets, train
from .headpred import (HeadModel, HeadModelConfig, TraceDataset, build_dataset, predict,
                       train_fedavg, train_pfl)
from .nn import Network
from .scenario import build_scenario

METRIC_COLUMNS = ["policy", "seed", "n_users", "n_aps", "episodes", "chunks",
                  "avg_viewport_quality", "avg_intra_switch", "avg_inter_switch",
                  "avg_rebuffering", "avg_sum_rate", "avg_qoe", "avg_tiles_overlap"]


# ---------------------------------------------------------------- predictors


class ModelPredictor:
    """Per-user head models fed with the last ``q_hist`` reported poses."""

    def __init__(self, models):
        self.models = list(models)

    def __call__(self, user, trace, frame, q_pred):
        m = self.models[user]
        idx = np.clip(np.arange(frame - m.cfg.q_hist + 1, frame + 1), 0, None) % len(trace)
        pred = predict(m, trace[idx])
        if len(pred) < q_pred:
            pred = np.concatenate([pred, np.repeat(pred[-1:], q_pred - len(pred), axis=0)])
        return pred[:q_pred]


def head_dataset(traces, users, videos, settings, frames_per_chunk: int) -> TraceDataset:
    """Training windows per user, evenly subsampled to ``settings.max_windows``."""
    ds = build_dataset(traces, users, videos, settings.model, settings.stride, frames_per_chunk)
    for d in ds.users:
        if len(d.hist) > settings.max_windows:
            keep = np.linspace(0, len(d.hist) - 1, settings.max_windows).round().astype(int)
            d.hist, d.target = d.hist[keep], d.target[keep]
    return ds


def train_head_models(cfg: ExperimentConfig, traces, rng):
    """Returns (per-user PFL models, shared FedAvg model)."""
    s = cfg.headpred
    users = range(cfg.scenario.n_users)
    videos = range(min(s.train_videos, cfg.scenario.n_videos))
    ds = head_dataset(traces, users, videos, s, cfg.video.n_frames_per_chunk)
    init = HeadModel(s.model, rng)
    return train_pfl(s.pfl, ds, init), train_fedavg(s.pfl, ds, init)


def head_spec(m: HeadModel) -> str:
    c = m.cfg
    return f"headpred:{c.q_hist},{c.q_pred},{c.hidden},{c.n_layers}"


def load_head_model(path) -> HeadModel:
    spec, params = formats.read_checkpoint(path)
    kind, _, dims = spec.partition(":")
    if kind != "headpred":
        raise formats.FormatError(f"{path}: not a head-movement checkpoint")
    qh, qp, h, n = (int(x) for x in dims.split(","))
    m = HeadModel(HeadModelConfig(qh, qp, h, n), np.random.default_rng(0))
    m.params = params
    return m


# ---------------------------------------------------------------- policies


class DrlEval:
    """Trained actors without exploration noise."""

    def __init__(self, agents, joint):
        self.inner = LearnedPolicy(agents, joint)

    def reset(self, env):
        self.inner.reset()

    def macro(self, env, u):
        env.set_macro_action(u, self.inner.macro(u, env.macro_obs(u), env.sc.video.n_tiles))

    def beams(self, env):
        sc = env.sc
        raw = self.inner.prim(env.prim_obs(), sc.prim_act_dim)
        return apply_prim_action(raw, sc.n_users, sc.n_aps, sc.phy)

    def observe(self, env, res):
        pass


class RandomEval(DrlEval):
    def __init__(self, rng):
        self.inner = RandomPolicy(rng)


class Composite:
    """Mix a bitrate policy and a beam policy; either may be a heuristic."""

    def __init__(self, drl: DrlEval | None, bitrate: str, beams: str, wmmse_cfg,
                 reactive_delay: int | None = None):
        self.drl = drl
        self.bitrate = bitrate
        self.beam_kind = beams
        self.wmmse_cfg = wmmse_cfg
        self.reactive = None if reactive_delay is None else ReactiveBlockage(reactive_delay)
        self.prev = {}

    def reset(self, env):
        if self.drl is not None:
            self.drl.reset(env)
        if self.reactive is not None:
            self.reactive.reset()
        self.prev = {}

    def macro(self, env, u):
        if self.bitrate == "drl":
            return self.drl.macro(env, u)
        tp = env.tile_prediction(u)
        bits, td = self.prev.get(u, (None, None))
        est = throughput_estimate(bits, td, env.sc.video.slot_seconds,
                                  default_prior(tp, env.sc.video))
        env.set_selection(u, priority_bitrate(tp, est, env.sc.video))

    def beams(self, env):
        if self.beam_kind == "drl":
            # keep the actor's history moving even when its beams are used
            return self.drl.beams(env)
        if self.reactive is not None:
            self.reactive.observe(env.actual_mask())
            mask = self.reactive.believed()
        else:
            mask = env.predicted_mask()
        return wmmse_beamforming(env.predicted_channels(), mask, self.wmmse_cfg,
                                 env.sc.phy).beams

    def observe(self, env, res):
        for c in res.completions:
            self.prev[c.user] = (env.users[c.user].chunk_bits, c.td)


def evaluate_episode(env: StreamingEnv, pol) -> list:
    pol.reset(env)
    for u in env.reset():
        pol.macro(env, u)
    out = []
    while True:
        res = env.step(pol.beams(env))
        pol.observe(env, res)
        for u in res.requests:
            pol.macro(env, u)
        out.append(res)
        if res.done:
            return out


# ---------------------------------------------------------------- metrics


@dataclass
class Metrics:
    chunks: int = 0
    quality: float = 0.0
    intra: float = 0.0
    inter: float = 0.0
    rebuffer: float = 0.0
    qoe: float = 0.0
    overlap: float = 0.0
    rate_sum: float = 0.0
    slots: int = 0

    def add_slot(self, rates, completions):
        self.rate_sum += float(np.sum(rates))
        self.slots += 1
        for c in completions:
            self.chunks += 1
            self.quality += c["quality"]
            self.intra += c["spatial_var"]
            self.inter += c["temporal_switch"]
            self.rebuffer += c["rebuffer"]
            self.qoe += c["qoe"]
            self.overlap += c["overlap"]

    def add_result(self, res):
        """In-run accumulation straight from a step result."""
        self.rate_sum += float(np.sum(res.rates))
        self.slots += 1
        for c in res.completions:
            self.chunks += 1
            self.quality += c.report.avg_view_quality
            self.intra += c.report.spatial_var
            self.inter += c.report.temporal_switch
            self.rebuffer += c.report.rebuffer_slots
            self.qoe += c.report.qoe
            self.overlap += c.overlap

    def row(self, policy, seed, n_users, n_aps, episodes) -> dict:
        n = max(self.chunks, 1)
        return {"policy": policy, "seed": seed, "n_users": n_users, "n_aps": n_aps,
                "episodes": episodes, "chunks": self.chunks,
                "avg_viewport_quality": self.quality / n, "avg_intra_switch": self.intra / n,
                "avg_inter_switch": self.inter / n, "avg_rebuffering": self.rebuffer / n,
                "avg_sum_rate": self.rate_sum / max(self.slots, 1), "avg_qoe": self.qoe / n,
                "avg_tiles_overlap": self.overlap / n}


def metrics_from_log(records) -> Metrics:
    m = Metrics()
    for rec in records:
        m.add_slot(rec["rates"], rec["completions"])
    return m


def user_average_qoe(records, n_users: int) -> np.ndarray:
    tot = np.zeros(n_users)
    cnt = np.zeros(n_users)
    for rec in records:
        for c in rec["completions"]:
            tot[c["user"]] += c["qoe"]
            cnt[c["user"]] += 1
    return tot / np.maximum(cnt, 1)


def ccdf(values, thresholds) -> np.ndarray:
    """Fraction of ``values`` strictly above each threshold."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("need at least one value")
    return np.array([(v > t).mean() for t in np.asarray(thresholds, float)])


def cdf(values, thresholds) -> np.ndarray:
    return 1.0 - ccdf(values, thresholds)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_metrics(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(METRIC_COLUMNS)
        for r in rows:
            wr.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])


# ---------------------------------------------------------------- artifacts


def load_inputs(cfg: ExperimentConfig, rng):
    traces = formats.read_traces(cfg.traces_file) if cfg.traces_file else None
    saliency = None
    if cfg.saliency_dir:
        saliency = [formats.read_smap(Path(cfg.saliency_dir) / f"video_{v}.smap")
                    for v in range(cfg.scenario.n_videos)]
    return build_scenario(cfg.scenario, cfg.radio.phy(), cfg.video, cfg.qoe, cfg.fusion,
                          cfg.reward, cfg.saliency, rng, traces=traces, saliency=saliency)


def save_actors(out: Path, agents, joint) -> None:
    for u, ag in enumerate(agents):
        formats.write_checkpoint(out / f"macro_actor_{u}.nnck", ag.actor.spec, ag.actor.params)
    formats.write_checkpoint(out / "prim_actor.nnck", joint.actor.spec, joint.actor.params)


def load_actors(ckpt: Path, env, cfg: ExperimentConfig):
    agents, joint = build_nets(env, cfg.train, np.random.default_rng(0))
    for u, ag in enumerate(agents):
        spec, params = formats.read_checkpoint(ckpt / f"macro_actor_{u}.nnck")
        ag.actor = Network.from_spec(spec, params)
    spec, params = formats.read_checkpoint(ckpt / "prim_actor.nnck")
    joint.actor = Network.from_spec(spec, params)
    return agents, joint


def save_head_models(out: Path, pfl, fedavg) -> None:
    for u, m in enumerate(pfl):
        formats.write_checkpoint(out / f"headpred_pfl_{u}.nnck", head_spec(m), m.params)
    formats.write_checkpoint(out / "headpred_fedavg.nnck", head_spec(fedavg), fedavg.params)


def _head_models(cfg, traces, rng, n_users):
    ck = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ck is not None and (ck / "headpred_fedavg.nnck").exists():
        pfl = [load_head_model(ck / f"headpred_pfl_{u}.nnck") for u in range(n_users)]
        return pfl, load_head_model(ck / "headpred_fedavg.nnck")
    return train_head_models(cfg, traces, rng)


def train_config(cfg: ExperimentConfig):
    """The DRL training config, seeded from the experiment seed."""
    return dataclasses.replace(cfg.train, seed=cfg.seed)


def _predictor(policy, pfl, fedavg):
    if policy == "oracle-pred":
        return oracle_predictor
    if policy == "combined-fov":
        return persistence_predictor
    if policy == "fedavg-pred":
        return ModelPredictor([fedavg] * len(pfl))
    return ModelPredictor(pfl)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Build the scenario, obtain policies, evaluate and write artifacts.

    Writes ``metrics.csv``, ``episodes.jsonl`` and ``qoe_ccdf.csv`` and
    returns the metrics row.
    """
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    sc, traces, _ = load_inputs(cfg, rng)
    pfl, fedavg = _head_models(cfg, traces, rng, sc.n_users)
    env = StreamingEnv(sc, _predictor(cfg.policy, pfl, fedavg))

    drl = None
    if cfg.policy != "random" and cfg.policy != "combined-fov":
        ck = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
        if ck is not None and (ck / "prim_actor.nnck").exists():
            agents, joint = load_actors(ck, env, cfg)
        else:
            res = train(StreamingEnv(sc, ModelPredictor(pfl)), train_config(cfg))
            agents, joint = res.agents, res.joint
        drl = DrlEval(agents, joint)

    if cfg.policy == "random":
        pol = RandomEval(np.random.default_rng(cfg.seed + 1))
    elif cfg.policy == "wmmse":
        pol = Composite(drl, "drl", "wmmse", cfg.wmmse)
    elif cfg.policy == "priority":
        pol = Composite(drl, "priority", "drl", cfg.wmmse)
    elif cfg.policy == "combined-fov":
        pol = Composite(None, "priority", "wmmse", cfg.wmmse, cfg.reactive_delay_slots)
    else:
        pol = drl

    records, m = [], Metrics()
    for _ in range(cfg.eval_episodes):
        for res in evaluate_episode(env, pol):
            m.add_result(res)
            records.append(log_record(res))
    row = m.row(cfg.policy, cfg.seed, sc.n_users, sc.n_aps, cfg.eval_episodes)
    write_metrics(out / "metrics.csv", [row])
    with open(out / "episodes.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    avg = user_average_qoe(records, sc.n_users)
    th = np.linspace(min(avg.min(), 0.0) - 1.0, max(avg.max(), 0.0) + 1.0, 21)
    with open(out / "qoe_ccdf.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["threshold", "cdf", "ccdf"])
        for t, c in zip(th, ccdf(avg, th)):
            wr.writerow([repr(float(t)), repr(float(1.0 - c)), repr(float(c))])
    return row


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
