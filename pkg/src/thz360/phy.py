"""THz line-of-sight channel, self-blockage geometry and per-slot rates.

All internal quantities are linear SI units; dB conversions happen once in
``PhyConfig.from_db``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

SPEED_OF_LIGHT = 299_792_458.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class PhyConfig:
    """Radio parameters, stored in linear units.

    ``g_ap`` / ``g_user`` are linear antenna gains, ``p_max`` and ``noise``
    are in watts. ``element_spacing`` is the ULA spacing as a fraction of the
    carrier wavelength.
    """

    f_c: float = 1.05e12
    kappa: float = 0.07512
    bandwidth: float = 0.5e9
    n_tx: int = 6
    n_rx: int = 2
    g_ap: float = db_to_linear(25.0)
    g_user: float = db_to_linear(15.0)
    p_max: float = dbm_to_watt(5.0)
    noise: float = dbm_to_watt(-77.0)
    c0: float = SPEED_OF_LIGHT
    element_spacing: float = 0.5

    def __post_init__(self):
        if self.f_c <= 0 or self.bandwidth <= 0:
            raise ValueError("carrier frequency and bandwidth must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("antenna counts must be >= 1")
        if self.noise <= 0:
            raise ValueError("noise variance must be positive")

    @classmethod
    def from_db(cls, *, g_ap_dbi=25.0, g_user_dbi=15.0, p_max_dbm=5.0,
                noise_dbm=-77.0, **kwargs) -> "PhyConfig":
        return cls(g_ap=db_to_linear(g_ap_dbi), g_user=db_to_linear(g_user_dbi),
                   p_max=dbm_to_watt(p_max_dbm), noise=dbm_to_watt(noise_dbm),
                   **kwargs)


@dataclass
class Geometry:
    ap_positions: np.ndarray
    user_positions: np.ndarray
    phi_blocked: float = np.pi

    def __post_init__(self):
        self.ap_positions = np.atleast_2d(np.asarray(self.ap_positions, dtype=float))
        self.user_positions = np.atleast_2d(np.asarray(self.user_positions, dtype=float))
        if not 0.0 <= self.phi_blocked <= 2 * np.pi:
            raise ValueError("phi_blocked must lie in [0, 2*pi]")
        if np.any(self.ap_positions[:, 2] <= 0) or np.any(self.user_positions[:, 2] <= 0):
            raise ValueError("all heights must be positive")
        if self.ap_positions[:, 2].min() < self.user_positions[:, 2].max():
            raise ValueError("APs must be mounted at or above user height")

    @property
    def n_aps(self) -> int:
        return len(self.ap_positions)

    @property
    def n_users(self) -> int:
        return len(self.user_positions)

    def link_azimuth(self, user: int, ap: int) -> float:
        """Longitude of the user->AP LoS direction, in [0, 2*pi)."""
        dx, dy = (self.ap_positions[ap, :2] - self.user_positions[user, :2])
        return float(np.mod(np.arctan2(dy, dx), 2 * np.pi))


@dataclass(frozen=True)
class HeadPose:
    theta: float
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= np.pi:
            raise ValueError(f"theta={self.theta} outside [0, pi]")


@dataclass
class ChannelMatrix:
    entries: np.ndarray
    ap_index: int
    user_index: int


@dataclass
class BeamSet:
    """Beams ``b[u, a]`` stored as a complex array of shape (U, A, N_t)."""

    beams: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0), complex))

    @classmethod
    def zeros(cls, n_users: int, n_aps: int, n_tx: int) -> "BeamSet":
        return cls(np.zeros((n_users, n_aps, n_tx), dtype=complex))

    def ap_power(self) -> np.ndarray:
        return np.sum(np.abs(self.beams) ** 2, axis=(0, 2))


def wrap_pi(x):
    """Map angles to (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    y = np.where(y == -np.pi, np.pi, y)
    return y if np.ndim(y) else float(y)


def path_gain(ap_pos, user_pos, cfg: PhyConfig) -> float:
    d = float(np.linalg.norm(np.asarray(ap_pos, float) - np.asarray(user_pos, float)))
    if d <= 0.0:
        raise ValueError("AP and user positions coincide")
    return cfg.c0 / (4 * np.pi * cfg.f_c * d) * np.exp(-0.5 * cfg.kappa * d)


def steering_vector(angle: float, n_elements: int, spacing: float = 0.5) -> np.ndarray:
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    k = np.arange(n_elements)
    return np.exp(1j * 2 * np.pi * spacing * k * np.sin(angle))


def link_angles(geo: Geometry, user: int, ap: int, facing: float = 0.0):
    """(AoD, AoA) in the azimuthal plane.

    The AP array lies along the global x-axis, the HMD array along the user's
    facing direction ``facing``; angles are measured from array broadside.
    """
    az = geo.link_azimuth(user, ap)
    aod = wrap_pi(az + np.pi)  # direction AP -> user
    aoa = wrap_pi(az - facing)
    return aod, aoa


def channel_matrix(ap: int, user: int, aod: float, aoa: float, geo: Geometry,
                   cfg: PhyConfig) -> ChannelMatrix:
    gamma = path_gain(geo.ap_positions[ap], geo.user_positions[user], cfg)
    a_t = steering_vector(aod, cfg.n_tx, cfg.element_spacing)
    a_r = steering_vector(aoa, cfg.n_rx, cfg.element_spacing)
    g = np.sqrt(cfg.g_ap * cfg.g_user) * gamma * np.outer(a_t, a_r.conj())
    return ChannelMatrix(g, ap, user)


def all_channels(geo: Geometry, cfg: PhyConfig, facings=None) -> np.ndarray:
    """Stack every G_{u,a} into an array of shape (U, A, N_t, N_r)."""
    U, A = geo.n_users, geo.n_aps
    if facings is None:
        facings = np.zeros(U)
    out = np.empty((U, A, cfg.n_tx, cfg.n_rx), dtype=complex)
    for u in range(U):
        for a in range(A):
            aod, aoa = link_angles(geo, u, a, facings[u])
            out[u, a] = channel_matrix(a, u, aod, aoa, geo, cfg).entries
    return out


def nonblocked_aps(pose: HeadPose, user: int, geo: Geometry) -> set[int]:
    half = geo.phi_blocked / 2.0
    keep = set()
    for a in range(geo.n_aps):
        off = wrap_pi(pose.phi - geo.link_azimuth(user, a) - np.pi)
        if abs(off) >= half:
            keep.add(a)
    return keep


def nonblocked_mask(phis, geo: Geometry) -> np.ndarray:
    """Boolean (U, A) mask of non-blocked links for longitudes ``phis``."""
    phis = np.asarray(phis, dtype=float)
    mask = np.zeros((geo.n_users, geo.n_aps), dtype=bool)
    for u in range(geo.n_users):
        for a in range(geo.n_aps):
            off = wrap_pi(phis[u] - geo.link_azimuth(u, a) - np.pi)
            mask[u, a] = abs(off) >= geo.phi_blocked / 2.0
    return mask


def _as_mask(nb_sets, n_users, n_aps) -> np.ndarray:
    if isinstance(nb_sets, np.ndarray) and nb_sets.dtype == bool:
        return nb_sets
    mask = np.zeros((n_users, n_aps), dtype=bool)
    for u, s in enumerate(nb_sets):
        mask[u, list(s)] = True
    return mask


def effective_links(channels, beams: BeamSet, nb_sets) -> np.ndarray:
    """d[u, u'] = sum over shared non-blocked APs of G_{u,a}^H b_{u',a}.

    Returns complex array (U, U, N_r).
    """
    channels = _channel_array(channels)
    U, A = channels.shape[:2]
    mask = _as_mask(nb_sets, U, A)
    shared = mask[:, None, :] & mask[None, :, :]  # (u, u', a)
    # G^H b: (u, a, r) x (u', a, t) -> (u, u', a, r)
    gh_b = np.einsum("uatr,vat->uvar", channels.conj(), beams.beams)
    return np.einsum("uvar,uva->uvr", gh_b, shared)


def _channel_array(channels) -> np.ndarray:
    if isinstance(channels, np.ndarray):
        return channels
    # nested list of ChannelMatrix indexed [user][ap]
    return np.array([[c.entries for c in row] for row in channels])


def all_user_rates(beams: BeamSet, channels, nb_sets, cfg: PhyConfig) -> np.ndarray:
    d = effective_links(channels, beams, nb_sets)
    U = d.shape[0]
    rates = np.empty(U)
    eye = np.eye(d.shape[2])
    for u in range(U):
        others = [v for v in range(U) if v != u]
        gamma = cfg.noise * eye
        if others:
            dv = d[u, others]  # (U-1, N_r)
            gamma = gamma + np.einsum("vr,vs->rs", dv, dv.conj())
        sig = d[u, u]
        c = linalg.cho_factor(gamma, lower=True)
        sinr = np.real(np.vdot(sig, linalg.cho_solve(c, sig)))
        rates[u] = cfg.bandwidth * np.log2(1.0 + max(sinr, 0.0))
    return rates


def user_rate(user: int, beams: BeamSet, channels, nb_sets, cfg: PhyConfig) -> float:
    return float(all_user_rates(beams, channels, nb_sets, cfg)[user])


def project_power(beams: BeamSet, p_max: float) -> BeamSet:
    b = beams.beams.copy()
    power = np.sum(np.abs(b) ** 2, axis=(0, 2))
    scale = np.ones_like(power)
    over = power > p_max
    scale[over] = np.sqrt(p_max / power[over])
    b *= scale[None, :, None]
    return BeamSet(b)
