"""Replay storage: Mac-CERTs for macro-actions and a plain buffer for primitives.

Both keep every slot in insertion order. Minibatches are windows of
consecutive records drawn from a single episode, so a recurrent network can
rebuild its history by replaying the window from a zero state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MacroRecord:
    """One slot of joint macro experience (arrays indexed by agent)."""

    obs: np.ndarray  # (U, d_obs)
    act: np.ndarray  # (U, N)
    next_obs: np.ndarray  # (U, d_obs)
    cum_reward: np.ndarray  # (U,)  R^c accumulated since the agent's last request
    duration: np.ndarray  # (U,)  slots elapsed since that request, inclusive
    completed: np.ndarray  # (U,) bool
    done: bool
    episode: int


@dataclass
class PrimRecord:
    obs: np.ndarray
    act: np.ndarray
    next_obs: np.ndarray
    reward: float
    macro_act: np.ndarray
    next_macro_act: np.ndarray
    done: bool
    episode: int


@dataclass
class Batch:
    records: list
    start: int  # position of the window inside the index list it was drawn from

    def stack(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def valid_starts(records, idx, size) -> list[int]:
    """Window starts whose ``size`` records all belong to one episode."""
    if size > len(idx):
        return []
    ep = np.array([records[i].episode for i in idx])
    ok = ep[:len(idx) - size + 1] == ep[size - 1:]
    return np.flatnonzero(ok).tolist()


def _window(records, idx, size, rng) -> Batch:
    if size < 1 or size > len(idx):
        raise ValueError(f"cannot sample {size} consecutive records from {len(idx)}")
    starts = valid_starts(records, idx, size)
    if not starts:
        raise ValueError(f"no episode holds {size} consecutive records")
    s = starts[int(rng.integers(len(starts)))]
    return Batch([records[i] for i in idx[s:s + size]], s)


class MacCerts:
    """Per-slot joint macro records with completion-based filters.

    Filter results are kept as incremental index lists so lookups stay cheap
    while the buffer grows.
    """

    def __init__(self, capacity: int | None = None):
        self.capacity = capacity
        self.records: list[MacroRecord] = []
        self._any: list[int] = []
        self._agent: dict[int, list[int]] = {}

    def __len__(self):
        return len(self.records)

    def push(self, rec: MacroRecord) -> None:
        self.records.append(rec)
        if self.capacity is not None and len(self.records) > self.capacity:
            del self.records[0]
            self._reindex()
            return
        i = len(self.records) - 1
        done = np.flatnonzero(rec.completed)
        if done.size:
            self._any.append(i)
        for u in done:
            self._agent.setdefault(int(u), []).append(i)

    def _reindex(self):
        self._any, self._agent = [], {}
        for i, r in enumerate(self.records):
            done = np.flatnonzero(r.completed)
            if done.size:
                self._any.append(i)
            for u in done:
                self._agent.setdefault(int(u), []).append(i)

    def filter_agent(self, u: int) -> list[int]:
        """Indices of records in which agent ``u`` completed its macro-action."""
        return list(self._agent.get(u, []))

    def filter_any(self) -> list[int]:
        return list(self._any)

    def sample(self, idx: list[int], size: int, rng) -> Batch:
        return _window(self.records, idx, size, rng)


class PrimBuffer:
    def __init__(self, capacity: int | None = None):
        self.capacity = capacity
        self.records: list[PrimRecord] = []

    def __len__(self):
        return len(self.records)

    def push(self, rec: PrimRecord) -> None:
        self.records.append(rec)
        if self.capacity is not None and len(self.records) > self.capacity:
            del self.records[0]

    def sample(self, size: int, rng) -> Batch:
        return _window(self.records, range(len(self.records)), size, rng)
