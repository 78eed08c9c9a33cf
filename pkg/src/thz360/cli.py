"""Command-line entry point (``python -m thz360``)."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import formats, harness
from .config import POLICIES, ConfigError, ExperimentConfig, dump_config, load_config
from .env import StreamingEnv
from .headpred import generate_traces
from .hddpg import train
from .scenario import personas, synth_saliency


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out_dir"] = args.out
    if getattr(args, "policy", None) is not None:
        over["policy"] = args.policy
    return dataclasses.replace(cfg, **over) if over else cfg


def cmd_gen_traces(cfg, args) -> None:
    out = harness.ensure_dir(cfg.out_dir)
    s = cfg.scenario
    tr = generate_traces(personas(s.n_users), s.n_videos, s.frames_per_video,
                         np.random.default_rng(cfg.seed))
    formats.write_traces(out / "traces.csv", tr)
    print(out / "traces.csv")


def cmd_gen_saliency(cfg, args) -> None:
    out = harness.ensure_dir(cfg.out_dir)
    rng = np.random.default_rng(cfg.seed)
    for v in range(cfg.scenario.n_videos):
        p = out / f"video_{v}.smap"
        formats.write_smap(p, synth_saliency(cfg.scenario.frames_per_video, cfg.saliency, rng))
        print(p)


def cmd_train_headpred(cfg, args) -> None:
    out = harness.ensure_dir(cfg.out_dir)
    rng = np.random.default_rng(cfg.seed)
    _, traces, _ = harness.load_inputs(cfg, rng)
    pfl, fedavg = harness.train_head_models(cfg, traces, rng)
    harness.save_head_models(out, pfl, fedavg)
    print(f"saved {len(pfl) + 1} head-movement checkpoints to {out}")


def cmd_train_drl(cfg, args) -> None:
    out = harness.ensure_dir(cfg.out_dir)
    rng = np.random.default_rng(cfg.seed)
    sc, traces, _ = harness.load_inputs(cfg, rng)
    pfl, _ = harness._head_models(cfg, traces, rng, sc.n_users)
    with open(out / "train_curve.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["episode", "r_extr", "r_intr", "critic_loss", "prim_loss"])

        def log(st):
            wr.writerow([st.episode, repr(st.r_extr), repr(st.r_intr),
                         repr(st.critic_loss), repr(st.prim_loss)])

        res = train(StreamingEnv(sc, harness.ModelPredictor(pfl)), harness.train_config(cfg),
                    log_curve=log)
    harness.save_actors(out, res.agents, res.joint)
    print(f"trained {len(res.curve)} episodes, checkpoints in {out}")


def cmd_evaluate(cfg, args) -> None:
    row = harness.run_experiment(cfg)
    print(", ".join(f"{k}={row[k]}" for k in harness.METRIC_COLUMNS))


def cmd_sweep(cfg, args) -> None:
    out = harness.ensure_dir(cfg.out_dir)
    policies = args.policies.split(",") if args.policies else [cfg.policy]
    for p in policies:
        if p not in POLICIES:
            raise ConfigError(f"policy: unknown policy {p!r}")
    rows = []
    for seed in range(cfg.seed, cfg.seed + args.seeds):
        for p in policies:
            run = dataclasses.replace(cfg, seed=seed, policy=p, out_dir=str(out / f"{p}_s{seed}"))
            rows.append(harness.run_experiment(run))
            print(f"{p} seed={seed} avg_qoe={rows[-1]['avg_qoe']}")
    harness.write_metrics(out / "metrics.csv", rows)


COMMANDS = {
    "gen-traces": (cmd_gen_traces, "write synthetic head-movement traces (CSV)"),
    "gen-saliency": (cmd_gen_saliency, "write synthetic saliency videos (SMAP)"),
    "train-headpred": (cmd_train_headpred, "train PFL and FedAvg head predictors"),
    "train-drl": (cmd_train_drl, "train the hierarchical DRL agents"),
    "evaluate": (cmd_evaluate, "evaluate one policy and write metrics.csv"),
    "sweep": (cmd_sweep, "evaluate several seeds and policies"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thz360", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--policy", choices=POLICIES, help="evaluation policy")
        if name == "sweep":
            p.add_argument("--seeds", type=int, default=3, help="number of consecutive seeds")
            p.add_argument("--policies", help="comma-separated policies (default: --policy)")
        if name == "evaluate":
            p.add_argument("--dump-config", action="store_true",
                           help="print the effective config and exit")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if getattr(args, "dump_config", False):
            print(dump_config(cfg))
            return 0
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed: must be non-negative")
        COMMANDS[args.command][0](cfg, args)
    except (ConfigError, formats.FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
