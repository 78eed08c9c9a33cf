"""Head-orientation maps, regional fusion and viewport/marginal tile selection.

Maps are equirectangular grids of shape (H, W): row index is latitude
(theta from the +z axis, top row first), column index is longitude.
Tiles are numbered row-major, ``n = row * cols + col``. Ties are broken
towards the lowest tile index everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Tiling:
    rows: int = 4
    cols: int = 6

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    def check(self, grid: np.ndarray):
        h, w = grid.shape[-2:]
        if h % self.rows or w % self.cols:
            raise ValueError(f"{h}x{w} map does not split into {self.rows}x{self.cols} tiles")

    def neighbors(self, n: int) -> list[int]:
        """4-neighbourhood with longitude wrap, no latitude wrap."""
        r, c = divmod(n, self.cols)
        out = []
        if r > 0:
            out.append(n - self.cols)
        if r < self.rows - 1:
            out.append(n + self.cols)
        out.append(r * self.cols + (c - 1) % self.cols)
        out.append(r * self.cols + (c + 1) % self.cols)
        return sorted(set(out) - {n})

    def tile_of(self, theta: float, phi: float) -> int:
        r = min(int(theta / math.pi * self.rows), self.rows - 1)
        c = int(np.mod(phi, 2 * math.pi) / (2 * math.pi) * self.cols) % self.cols
        return r * self.cols + c


@dataclass(frozen=True)
class FusionConfig:
    kernel_sigma: float = 0.35
    alpha_marg: float = 0.15
    fov_lat_deg: float = 90.0
    fov_lon_deg: float = 135.0

    def __post_init__(self):
        if self.kernel_sigma <= 0:
            raise ValueError("kernel_sigma must be positive")
        if self.alpha_marg < 0:
            raise ValueError("alpha_marg must be non-negative")

    def footprint(self, tiling: Tiling) -> tuple[int, int]:
        """Viewport size in tiles (rows, cols) covered by the field of view."""
        rows = math.ceil(self.fov_lat_deg / (180.0 / tiling.rows) - 1e-9)
        cols = math.ceil(self.fov_lon_deg / (360.0 / tiling.cols) - 1e-9)
        return min(rows, tiling.rows), min(cols, tiling.cols)


@dataclass
class TilePrediction:
    view_sets: list
    marginal_sets: list
    pred_set: frozenset
    indicator: np.ndarray
    avg_features: np.ndarray


def pixel_directions(W: int, H: int):
    theta = (np.arange(H) + 0.5) / H * np.pi
    phi = (np.arange(W) + 0.5) / W * 2 * np.pi
    return np.meshgrid(theta, phi, indexing="ij")


def great_circle(theta1, phi1, theta2, phi2):
    """Angular distance between directions given as (colatitude, longitude)."""
    cosd = (np.cos(theta1) * np.cos(theta2)
            + np.sin(theta1) * np.sin(theta2) * np.cos(phi1 - phi2))
    return np.arccos(np.clip(cosd, -1.0, 1.0))


def head_orientation_map(theta: float, phi: float, W: int, H: int,
                         sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    th, ph = pixel_directions(W, H)
    dist = great_circle(th, ph, theta, phi)
    return np.exp(-dist ** 2 / (2 * sigma ** 2))


def normalize_map(m: np.ndarray) -> np.ndarray:
    lo, hi = float(np.min(m)), float(np.max(m))
    if not hi > lo:
        return np.zeros_like(m, dtype=float)
    return (m - lo) / (hi - lo)


def _tile_blocks(m: np.ndarray, t: Tiling) -> np.ndarray:
    t.check(m)
    h, w = m.shape
    bh, bw = h // t.rows, w // t.cols
    # (rows, bh, cols, bw) -> (rows, cols, bh*bw)
    return m.reshape(t.rows, bh, t.cols, bw).transpose(0, 2, 1, 3).reshape(t.rows, t.cols, -1)


def tile_max(m: np.ndarray, t: Tiling) -> np.ndarray:
    return _tile_blocks(m, t).max(axis=2).ravel()


def tile_mean(m: np.ndarray, t: Tiling) -> np.ndarray:
    return _tile_blocks(m, t).mean(axis=2).ravel()


def fusion_weights(sal: np.ndarray, head: np.ndarray, t: Tiling) -> tuple[float, float]:
    s_max = tile_max(sal, t)
    m_max = tile_max(head, t)
    return (float((s_max.max() - s_max.mean()) ** 2),
            float((m_max.max() - m_max.mean()) ** 2))


def regional_fusion(sal: np.ndarray, head: np.ndarray, t: Tiling) -> np.ndarray:
    ws, wm = fusion_weights(sal, head, t)
    return ws * sal + wm * head


def rectangle_tiles(top: int, left: int, fov_rows: int, fov_cols: int,
                    t: Tiling) -> frozenset:
    return frozenset((top + i) * t.cols + (left + j) % t.cols
                     for i in range(fov_rows) for j in range(fov_cols))


def select_viewport_tiles(tile_values: np.ndarray, t: Tiling, fov_rows: int,
                          fov_cols: int) -> frozenset:
    """Contiguous ``fov_rows x fov_cols`` rectangle with maximal summed value.

    ``tile_values`` is a length-N per-tile feature vector (or a full map,
    which is reduced with the per-tile mean).
    """
    if fov_rows > t.rows or fov_cols > t.cols:
        raise ValueError("field of view larger than the tiling")
    v = np.asarray(tile_values, dtype=float)
    if v.ndim == 2:
        v = tile_mean(v, t)
    grid = v.reshape(t.rows, t.cols)
    best, best_rect = -np.inf, None
    n_left = t.cols if fov_cols < t.cols else 1
    for top in range(t.rows - fov_rows + 1):
        for left in range(n_left):
            cols = [(left + j) % t.cols for j in range(fov_cols)]
            s = grid[top:top + fov_rows][:, cols].sum()
            if s > best:
                best, best_rect = s, (top, left)
    return rectangle_tiles(*best_rect, fov_rows, fov_cols, t)


def marginal_count(alpha_marg: float, chunk_gap: int, n_view: int) -> int:
    if chunk_gap < 1:
        raise ValueError("chunk_gap must be >= 1")
    return max(math.floor((alpha_marg * chunk_gap - 1) * n_view), 0)


def expand_marginal(tile_values: np.ndarray, view, count: int, t: Tiling) -> frozenset:
    v = np.asarray(tile_values, dtype=float)
    if v.ndim == 2:
        v = tile_mean(v, t)
    pred = set(view)
    for _ in range(count):
        frontier = sorted({nb for n in pred for nb in t.neighbors(n)} - pred)
        if not frontier:
            break
        pred.add(max(frontier, key=lambda n: (v[n], -n)))
    return frozenset(pred)


def tiles_overlap(pred, actual) -> float:
    actual = set(actual)
    if not actual:
        raise ValueError("actual tile set is empty")
    return len(set(pred) & actual) / len(actual)


def actual_tiles(poses, t: Tiling, fov_rows: int, fov_cols: int, W: int, H: int,
                 sigma: float) -> frozenset:
    """Union over frames of the viewport rectangle around each true pose."""
    out = set()
    for theta, phi in poses:
        hm = head_orientation_map(theta, phi, W, H, sigma)
        out |= select_viewport_tiles(hm, t, fov_rows, fov_cols)
    return frozenset(out)


def predict_tiles(sal_frames, pred_poses, t: Tiling, fc: FusionConfig,
                  chunk_gap: int) -> TilePrediction:
    """Run fusion and tile selection over the frames of one requested chunk.

    ``sal_frames`` is an (F, H, W) saliency stack; ``pred_poses`` the F
    predicted (theta, phi) pairs.
    """
    sal_frames = np.asarray(sal_frames, dtype=float)
    H, W = sal_frames.shape[1:]
    fr, fcols = fc.footprint(t)
    views, margs, feats = [], [], []
    pred = set()
    for sal, (theta, phi) in zip(sal_frames, pred_poses):
        s_n = normalize_map(sal)
        m_n = normalize_map(head_orientation_map(theta, phi, W, H, fc.kernel_sigma))
        x = regional_fusion(s_n, m_n, t)
        tv = normalize_map(tile_mean(x, t))
        view = select_viewport_tiles(tv, t, fr, fcols)
        k = marginal_count(fc.alpha_marg, chunk_gap, len(view))
        full = expand_marginal(tv, view, k, t)
        views.append(view)
        margs.append(full - view)
        feats.append(tv)
        pred |= full
    ind = np.zeros(t.n_tiles)
    ind[sorted(pred)] = 1.0
    return TilePrediction(views, margs, frozenset(pred), ind, np.mean(feats, axis=0))
