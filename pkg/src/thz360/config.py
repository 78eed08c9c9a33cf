"""Experiment configuration: strict JSON <-> nested dataclasses.

Unknown keys are rejected and every error names the offending field path,
e.g. ``train.agent_net.hiden: unknown key``.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass
from typing import Optional

from .baselines import WmmseConfig
from .env import RewardConfig
from .fusion import FusionConfig
from .hddpg import NetSizes, TrainConfig
from .headpred import HeadModelConfig, PflConfig
from .phy import PhyConfig
from .scenario import SaliencyConfig, ScenarioSpec
from .streaming import QoEConfig, VideoConfig

POLICIES = ("drl", "wmmse", "priority", "combined-fov", "fedavg-pred", "oracle-pred", "random")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RadioConfig:
    """Radio parameters as written in configs (gains and powers in dB units)."""

    f_c: float = 1.05e12
    kappa: float = 0.07512
    bandwidth: float = 0.5e9
    n_tx: int = 6
    n_rx: int = 2
    g_ap_dbi: float = 25.0
    g_user_dbi: float = 15.0
    p_max_dbm: float = 5.0
    noise_dbm: float = -77.0

    def phy(self) -> PhyConfig:
        return PhyConfig.from_db(g_ap_dbi=self.g_ap_dbi, g_user_dbi=self.g_user_dbi,
                                 p_max_dbm=self.p_max_dbm, noise_dbm=self.noise_dbm,
                                 f_c=self.f_c, kappa=self.kappa, bandwidth=self.bandwidth,
                                 n_tx=self.n_tx, n_rx=self.n_rx)


@dataclass(frozen=True)
class HeadPredSettings:
    model: HeadModelConfig = HeadModelConfig(q_hist=30, q_pred=120, hidden=16, n_layers=1)
    pfl: PflConfig = PflConfig(rounds=20, local_iters=3, lr=0.01, finetune_steps=10)
    train_videos: int = 3  # the first videos per user train, the rest test
    stride: int = 30
    max_windows: int = 64  # per user, subsampled evenly


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "out"
    policy: str = "drl"
    eval_episodes: int = 2
    reactive_delay_slots: int = 3
    traces_file: Optional[str] = None
    saliency_dir: Optional[str] = None
    checkpoint_dir: Optional[str] = None
    scenario: ScenarioSpec = ScenarioSpec()
    radio: RadioConfig = RadioConfig()
    video: VideoConfig = VideoConfig()
    qoe: QoEConfig = QoEConfig()
    fusion: FusionConfig = FusionConfig()
    reward: RewardConfig = RewardConfig()
    saliency: SaliencyConfig = SaliencyConfig()
    headpred: HeadPredSettings = HeadPredSettings()
    train: TrainConfig = TrainConfig(episodes=20, warmup_slots=300, batch_macro=16,
                                     batch_prim=32, lr_actor=1e-3, lr_critic=1e-3,
                                     agent_net=NetSizes(32, 32, 32),
                                     joint_net=NetSizes(64, 64, 64))
    wmmse: WmmseConfig = WmmseConfig(max_iter=30, tol=1e-4)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"policy: unknown policy {self.policy!r}, expected one of {POLICIES}")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes: must be >= 1")


# ---------------------------------------------------------------- (de)serialization


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or origin is types.UnionType:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, path)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is tuple or origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _hints(cls):
    import sys
    mod = sys.modules[cls.__module__]
    ns = dict(vars(mod))
    ns.update({"Optional": Optional})
    return typing.get_type_hints(cls, globalns=ns)


def from_dict(cls, data, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    hints = _hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"{sub}: unknown key")
        kwargs[key] = _convert(hints[key], value, sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from exc


def to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: invalid JSON ({exc})") from exc
    return from_dict(ExperimentConfig, data)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)
