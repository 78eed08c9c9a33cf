"""Benchmark policies: WMMSE beams, priority bitrate adaptation, reactive blockage."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fusion import TilePrediction
from .phy import BeamSet, PhyConfig, _as_mask, all_user_rates, project_power
from .streaming import QualitySelection, VideoConfig


@dataclass(frozen=True)
class WmmseConfig:
    max_iter: int = 100
    tol: float = 1e-6  # on the relative weighted sum-rate improvement
    weights: Optional[tuple] = None  # per-user rate weights, equal if None
    dual_tol: float = 1e-6
    dual_sweeps: int = 3

    def __post_init__(self):
        if self.tol <= 0 or self.dual_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class WmmseResult:
    beams: BeamSet
    history: list = field(default_factory=list)  # weighted sum-rate per accepted iterate
    converged: bool = False


def _masked_links(channels, mask):
    """H[u, v] of shape (A*Nt, Nr): channel from user v's beam to user u's receiver."""
    U, A, Nt, Nr = channels.shape
    shared = mask[:, None, :] & mask[None, :, :]  # (u, v, a)
    H = channels[:, None] * shared[..., None, None]  # (u, v, a, Nt, Nr)
    return H.reshape(U, U, A * Nt, Nr)


def weighted_sum_rate(beams: BeamSet, channels, mask, phy: PhyConfig, weights) -> float:
    return float(np.dot(weights, all_user_rates(beams, channels, mask, phy)))


def _init_beams(channels, mask, phy: PhyConfig) -> np.ndarray:
    U, A, Nt, _ = channels.shape
    b = np.zeros((U, A, Nt), dtype=complex)
    for u in range(U):
        for a in range(A):
            if not mask[u, a]:
                continue
            left, s, _ = np.linalg.svd(channels[u, a])
            if s[0] > 0:
                b[u, a] = left[:, 0] * np.sqrt(phy.p_max / U)
    return b


def _beam_system(H, rx, w, alpha):
    """Per-user Hermitian matrices K_v and right-hand sides of the beam update."""
    g = np.einsum("uvkr,ur->uvk", H, rx)  # g[u, v] = H[u,v] rx_u
    K = np.einsum("u,uvk,uvl->vkl", alpha * w, g, g.conj())
    rhs = (alpha * w)[:, None] * np.einsum("vvk->vk", g)
    return K, rhs


def _beams_for(K, rhs, mu, Nt):
    M = K + np.diag(np.repeat(mu, Nt))[None]
    try:
        out = np.linalg.solve(M, rhs[..., None])[..., 0]
        if np.all(np.isfinite(out)):
            return out
    except np.linalg.LinAlgError:
        pass
    return np.array([np.linalg.lstsq(m, r, rcond=None)[0] for m, r in zip(M, rhs)])


def _ap_power(b, A, Nt):
    U = b.shape[0]
    return np.sum(np.abs(b.reshape(U, A, Nt)) ** 2, axis=(0, 2))


def _solve_duals(K, rhs, p_max, A, Nt, cfg: WmmseConfig, mu0):
    """Cyclic per-AP bisection on the duals of the per-AP power constraints.

    ``mu0`` warm-starts the duals; returns (beams, duals).
    """
    mu = np.array(mu0, dtype=float)
    b = _beams_for(K, rhs, mu, Nt)
    # with every dual above this, each AP's share of a beam is below p_max
    scale = max(float(np.max(np.linalg.norm(rhs, axis=1))) / np.sqrt(p_max), 1e-300)
    for _ in range(cfg.dual_sweeps):
        moved = False
        for a in range(A):
            pw = _ap_power(b, A, Nt)[a]
            if pw <= p_max * (1 + 1e-9) and (mu[a] == 0 or pw >= p_max * (1 - cfg.dual_tol)):
                continue
            trial = mu.copy()

            def power_at(val):
                trial[a] = val
                return _ap_power(_beams_for(K, rhs, trial, Nt), A, Nt)[a]

            if pw > p_max:
                lo, hi = mu[a], max(2 * mu[a], 1e-3 * scale)
                while power_at(hi) > p_max and hi < 1e6 * scale:
                    lo, hi = hi, hi * 4
            elif power_at(0.0) <= p_max:
                lo = hi = 0.0
            else:
                lo, hi = 0.0, mu[a]
            for _ in range(200):
                if hi - lo <= cfg.dual_tol * hi:
                    break
                mid = 0.5 * (lo + hi)
                if power_at(mid) > p_max:
                    lo = mid
                else:
                    hi = mid
            moved = moved or abs(hi - mu[a]) > cfg.dual_tol * max(hi, mu[a])
            mu[a] = hi
            b = _beams_for(K, rhs, mu, Nt)
        if not moved:
            break
    return b, mu


def wmmse_beamforming(channels, nb_sets, cfg: WmmseConfig, phy: PhyConfig) -> WmmseResult:
    """Weighted sum-rate beamforming by receive filter / MSE weight / beam alternation.

    An iterate is accepted only if it does not lower the weighted sum-rate
    after projection onto the per-AP power budget; otherwise the loop stops
    and the best iterate so far is returned with ``converged`` False.
    """
    channels = np.asarray(channels)
    U, A, Nt, Nr = channels.shape
    mask = _as_mask(nb_sets, U, A)
    alpha = np.ones(U) if cfg.weights is None else np.asarray(cfg.weights, dtype=float)
    H = _masked_links(channels, mask)
    best = project_power(BeamSet(_init_beams(channels, mask, phy)), phy.p_max)
    best_wsr = weighted_sum_rate(best, channels, mask, phy, alpha)
    res = WmmseResult(best, [best_wsr])
    if not np.any(H):
        res.beams = BeamSet.zeros(U, A, Nt)
        res.history = [0.0]
        res.converged = True
        return res
    b = best.beams.reshape(U, A * Nt)
    mu = np.zeros(A)
    for _ in range(cfg.max_iter):
        # receive filters and MSE weights
        d = np.einsum("uvkr,vk->uvr", H.conj(), b)  # d[u, v] = H[u,v]^H b_v
        rx = np.zeros((U, Nr), dtype=complex)
        w = np.ones(U)
        for u in range(U):
            J = phy.noise * np.eye(Nr) + np.einsum("vr,vs->rs", d[u], d[u].conj())
            rx[u] = np.linalg.solve(J, d[u, u])
            e = 1.0 - np.real(np.vdot(rx[u], d[u, u]))
            w[u] = 1.0 / max(e, 1e-300)
        # scale the problem so the weights stay well conditioned
        K, rhs = _beam_system(H, rx, w / w.max(), alpha)
        b_new, mu = _solve_duals(K, rhs, phy.p_max, A, Nt, cfg, mu)
        if not np.all(np.isfinite(b_new)):
            return res
        cand = project_power(BeamSet(b_new.reshape(U, A, Nt)), phy.p_max)
        wsr = weighted_sum_rate(cand, channels, mask, phy, alpha)
        if wsr < best_wsr:
            res.converged = best_wsr - wsr <= cfg.tol * abs(best_wsr)
            return res
        gain = wsr - best_wsr
        best, best_wsr = cand, wsr
        res.beams = best
        res.history.append(wsr)
        b = best.beams.reshape(U, A * Nt)
        if gain <= cfg.tol * max(abs(wsr), 1e-300):
            res.converged = True
            return res
    return res


def throughput_estimate(prev_chunk_bits: Optional[float], prev_td_slots: Optional[int],
                        slot_seconds: float, prior: float) -> float:
    """Bits of the previous chunk over its download time; ``prior`` before any chunk."""
    if prev_chunk_bits is None or prev_td_slots is None:
        return prior
    if prev_td_slots < 1:
        raise ValueError("transmission delay must be at least one slot")
    return prev_chunk_bits / (prev_td_slots * slot_seconds)


def default_prior(tile_pred: TilePrediction, vc: VideoConfig) -> float:
    return vc.quality_bitrates[0] * len(tile_pred.pred_set)


def _best_level(n_tiles: int, budget: float, rates, cap: int) -> int:
    level = 1
    for m in range(1, cap + 1):
        if n_tiles * rates[m - 1] <= budget:
            level = m
    return level


def priority_bitrate(tile_pred: TilePrediction, estimate: float,
                     vc: VideoConfig) -> QualitySelection:
    """Viewport first, then the marginal tiles with what is left of the budget.

    The budget is the estimated throughput times the chunk duration; levels
    never drop below 1 and marginal tiles never exceed the viewport level.
    """
    if estimate < 0:
        raise ValueError("throughput estimate must be non-negative")
    rates = vc.quality_bitrates
    budget = estimate * vc.chunk_seconds
    view = set().union(*tile_pred.view_sets) & set(tile_pred.pred_set)
    marg = set(tile_pred.pred_set) - view
    per_bit = vc.chunk_seconds  # bits per tile per unit bitrate
    lv = _best_level(len(view), budget / per_bit, rates, vc.n_levels)
    left = max(budget / per_bit - len(view) * rates[lv - 1], 0.0)
    lm = _best_level(len(marg), left, rates, lv)
    levels = np.zeros(vc.n_tiles, dtype=int)
    levels[sorted(view)] = lv
    levels[sorted(marg)] = lm
    return QualitySelection(levels)


def reactive_blockage(history, delay_slots: int):
    """Believed non-blocked masks lagging the actual ones by ``delay_slots``."""
    if delay_slots < 0:
        raise ValueError("delay must be non-negative")
    hist = list(history)
    return [hist[max(t - delay_slots, 0)] for t in range(len(hist))]


class ReactiveBlockage:
    """Online version: feed actual masks slot by slot, read the believed one."""

    def __init__(self, delay_slots: int):
        if delay_slots < 0:
            raise ValueError("delay must be non-negative")
        self.delay = delay_slots
        self.seen = []

    def reset(self):
        self.seen = []

    def believed(self):
        if not self.seen:
            return None
        return self.seen[max(len(self.seen) - 1 - self.delay, 0)]

    def observe(self, mask) -> None:
        self.seen.append(np.array(mask, copy=True))
