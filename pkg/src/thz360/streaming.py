"""Tile/chunk bookkeeping, request timing and the per-chunk QoE model."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

UNBOUNDED = math.inf


@dataclass(frozen=True)
class VideoConfig:
    tile_rows: int = 4
    tile_cols: int = 6
    n_frames_per_chunk: int = 30
    chunk_slots: int = 10
    slot_seconds: float = 0.1
    quality_bitrates: tuple = (28e6, 33e6, 38e6, 43e6, 48e6)
    n_chunks: int = 20

    def __post_init__(self):
        rates = np.asarray(self.quality_bitrates, dtype=float)
        if rates.ndim != 1 or len(rates) < 1 or np.any(np.diff(rates) <= 0):
            raise ValueError("quality_bitrates must be strictly ascending")
        if self.chunk_slots < 1 or self.slot_seconds <= 0:
            raise ValueError("chunk_slots and slot_seconds must be positive")

    @property
    def n_tiles(self) -> int:
        return self.tile_rows * self.tile_cols

    @property
    def n_levels(self) -> int:
        return len(self.quality_bitrates)

    @property
    def chunk_seconds(self) -> float:
        return self.chunk_slots * self.slot_seconds


@dataclass(frozen=True)
class QoEConfig:
    lambda_spatial: float = 0.5
    lambda_temp: float = 0.5
    lambda_rd: float = 0.5

    def __post_init__(self):
        if min(self.lambda_spatial, self.lambda_temp, self.lambda_rd) < 0:
            raise ValueError("QoE weights must be non-negative")


@dataclass
class QualitySelection:
    """Per-tile quality level; 0 means the tile is not transmitted."""

    levels: np.ndarray

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=int)

    @property
    def sent(self) -> np.ndarray:
        return np.flatnonzero(self.levels > 0)

    def mean_sent_level(self) -> float:
        s = self.levels[self.levels > 0]
        return float(s.mean()) if s.size else 0.0


@dataclass(frozen=True)
class UserStreamState:
    buffer_slots: int = 0
    chunk_index: int = 0
    t_req: int = 0
    delta_rem: float = 0.0
    delta_time: int = 0
    buffer_threshold: int = 30
    last_avg_quality: Optional[float] = None


@dataclass(frozen=True)
class QoEReport:
    avg_view_quality: float
    spatial_var: float
    temporal_switch: float
    rebuffer_slots: float
    qoe: float


def chunk_size_bits(sel: QualitySelection, vc: VideoConfig) -> float:
    rates = np.concatenate([[0.0], np.asarray(vc.quality_bitrates, float)])
    return vc.chunk_slots * vc.slot_seconds * float(rates[sel.levels].sum())


def transmission_delay(rates_per_slot: Sequence[float], chunk_bits: float,
                       slot_seconds: float) -> float:
    """Slots needed to deliver ``chunk_bits``, counting the request slot.

    Returns ``UNBOUNDED`` when the horizon ends first.
    """
    if chunk_bits <= 0:
        return 1
    delivered = 0.0
    for k, r in enumerate(rates_per_slot, start=1):
        if r < 0:
            raise ValueError("rates must be non-negative")
        delivered += slot_seconds * r
        if delivered >= chunk_bits:
            return k
    return UNBOUNDED


def waiting_time(state: UserStreamState, td: int, vc: VideoConfig) -> int:
    left = max(state.buffer_slots - td, 0)
    return max(left + vc.chunk_slots - state.buffer_threshold, 0)


def advance_request(state: UserStreamState, td: int, wt: int,
                    vc: VideoConfig) -> UserStreamState:
    buf = max(max(state.buffer_slots - td, 0) + vc.chunk_slots - wt, 0)
    return replace(state, t_req=state.t_req + td + wt, buffer_slots=buf,
                   chunk_index=state.chunk_index + 1)


def rebuffering_delay(td: float, buffer_at_request: float) -> float:
    return max(td - buffer_at_request, 0)


def round_bitrate(nu: float, vc: VideoConfig) -> int:
    """Largest quality level whose bitrate does not exceed ``nu`` (1-based)."""
    rates = vc.quality_bitrates
    nu = min(max(nu, rates[0]), rates[-1])
    return int(np.searchsorted(rates, nu, side="right"))


def qoe_chunk(sel: QualitySelection, actual_tiles, prev_avg: Optional[float],
              rd: float, qc: QoEConfig) -> QoEReport:
    actual = np.asarray(sorted(actual_tiles), dtype=int)
    if actual.size == 0:
        raise ValueError("actual tile set is empty")
    lv = sel.levels[actual].astype(float)
    mean = float(lv.mean())
    var = float(np.mean((lv - mean) ** 2))
    temp = 0.0 if prev_avg is None else abs(mean - prev_avg)
    qoe = mean - qc.lambda_spatial * var - qc.lambda_temp * temp - qc.lambda_rd * rd
    return QoEReport(mean, var, temp, float(rd), qoe)
