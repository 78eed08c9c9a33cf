import math

import mpmath
import numpy as np
import pytest

from thz360.phy import (BeamSet, Geometry, HeadPose, PhyConfig, all_channels, channel_matrix,
                        db_to_linear, effective_links, nonblocked_aps, nonblocked_mask,
                        path_gain, project_power, steering_vector, user_rate, wrap_pi)
from thz360.scenario import AP_POSITIONS, layout


def gain_oracle(d, f_c=1.05e12, kappa=0.07512, c0=299_792_458.0):
    mpmath.mp.prec = 120
    d, f_c, kappa, c0 = (mpmath.mpf(repr(x)) for x in (d, f_c, kappa, c0))
    return c0 / (4 * mpmath.pi * f_c * d) * mpmath.exp(-kappa * d / 2)


def test_path_gain_matches_high_precision():
    cfg = PhyConfig()
    for d in (1.0, 2.5, 7.3):
        got = path_gain((0, 0, 0), (d, 0, 0), cfg)
        want = gain_oracle(d)
        assert abs(got - float(want)) <= 1e-12 * float(want)
    # the rounded textbook value assumes c0 = 3e8
    assert path_gain((0, 0, 0), (1, 0, 0), PhyConfig(c0=3e8)) == pytest.approx(2.1898e-5, rel=1e-4)
    assert path_gain((0, 0, 0), (1, 0, 0), cfg) == pytest.approx(2.18831e-5, rel=1e-5)


def test_path_gain_spreading_only_and_monotone():
    cfg = PhyConfig(kappa=0.0)
    g1 = path_gain((0, 0, 0), (0, 0, 1.5), cfg)
    assert g1 == pytest.approx(cfg.c0 / (4 * math.pi * cfg.f_c * 1.5), rel=1e-15)
    assert path_gain((0, 0, 0), (0, 0, 3.0), cfg) == pytest.approx(g1 / 2, rel=1e-15)
    ds = np.linspace(0.5, 20, 50)
    g = [path_gain((0, 0, 0), (d, 0, 0), PhyConfig()) for d in ds]
    assert np.all(np.diff(g) < 0)
    with pytest.raises(ValueError):
        path_gain((1, 2, 3), (1, 2, 3), cfg)


def test_steering_vector():
    assert np.allclose(steering_vector(0.0, 4), np.ones(4))
    assert np.allclose(steering_vector(1.2, 1), [1.0])
    assert np.allclose(steering_vector(math.pi / 2, 2), [1, -1])
    v = steering_vector(0.77, 9)
    assert np.allclose(np.abs(v), 1.0)


def test_channel_matrix_rank_one():
    cfg = PhyConfig()
    geo = layout(6)
    ch = channel_matrix(1, 2, 0.3, -1.1, geo, cfg).entries
    g = path_gain(geo.ap_positions[1], geo.user_positions[2], cfg)
    s = np.linalg.svd(ch, compute_uv=False)
    scale = math.sqrt(cfg.g_ap * cfg.g_user) * g
    assert s[0] == pytest.approx(scale * math.sqrt(12), rel=1e-12)
    assert s[1] <= 1e-12 * s[0]
    siso = channel_matrix(0, 0, 0.4, 0.2, geo, PhyConfig(n_tx=1, n_rx=1)).entries
    assert siso.shape == (1, 1)
    assert abs(siso[0, 0]) == pytest.approx(scale * path_gain(geo.ap_positions[0],
                                                             geo.user_positions[0], cfg) / g)


def test_db_conversion():
    cfg = PhyConfig.from_db(p_max_dbm=5.0)
    assert cfg.p_max == pytest.approx(3.162e-3, rel=1e-3)
    assert db_to_linear(25.0) == pytest.approx(10 ** 2.5)


def test_siso_rate_is_shannon():
    cfg = PhyConfig(n_tx=1, n_rx=1)
    g, p = 3e-4 + 1e-4j, 2e-3
    ch = np.array([[[[g]]]])
    beams = BeamSet(np.array([[[math.sqrt(p)]]], dtype=complex))
    r = user_rate(0, beams, ch, [{0}], cfg)
    want = cfg.bandwidth * math.log2(1 + abs(g) ** 2 * p / cfg.noise)
    assert abs(r - want) <= 1e-9 * want
    assert user_rate(0, BeamSet.zeros(1, 1, 1), ch, [{0}], cfg) == 0.0


def _dense_rate_oracle(u, beams, ch, nb, cfg):
    """Explicit loops and an explicit 2x2 inverse."""
    U, A, _, Nr = ch.shape
    d = np.zeros((U, Nr), dtype=complex)
    for v in range(U):
        for a in range(A):
            if a in nb[u] and a in nb[v]:
                d[v] += ch[u, a].conj().T @ beams[v, a]
    gam = cfg.noise * np.eye(Nr, dtype=complex)
    for v in range(U):
        if v != u:
            gam += np.outer(d[v], d[v].conj())
    (p, q), (r, s) = gam
    inv = np.array([[s, -q], [-r, p]]) / (p * s - q * r)
    sinr = np.real(d[u].conj() @ inv @ d[u])
    return cfg.bandwidth * math.log2(1 + sinr)


def random_instance(rng, U=2, A=3, Nt=4, Nr=2, scale=1e-4):
    ch = scale * (rng.standard_normal((U, A, Nt, Nr)) + 1j * rng.standard_normal((U, A, Nt, Nr)))
    b = 0.03 * (rng.standard_normal((U, A, Nt)) + 1j * rng.standard_normal((U, A, Nt)))
    nb = [set(np.flatnonzero(rng.random(A) < 0.7)) for _ in range(U)]
    return ch, BeamSet(b), nb


def test_two_user_rate_matches_dense_oracle():
    rng = np.random.default_rng(3)
    cfg = PhyConfig(n_tx=4, n_rx=2)
    for _ in range(100):
        ch, beams, nb = random_instance(rng)
        for u in range(2):
            got = user_rate(u, beams, ch, nb, cfg)
            want = _dense_rate_oracle(u, beams.beams, ch, nb, cfg)
            assert got == pytest.approx(want, rel=1e-6, abs=1e-6)


def test_single_user_mimo_matches_eigen_oracle():
    rng = np.random.default_rng(8)
    cfg = PhyConfig(n_tx=4, n_rx=2)
    for _ in range(20):
        ch, beams, _ = random_instance(rng, U=1)
        nb = [{0, 1, 2}]
        d = effective_links(ch, beams, nb)[0, 0]
        # eigenvalue of the rank-1 receive covariance over noise
        lam = np.linalg.eigvalsh(np.outer(d, d.conj()) / cfg.noise).max()
        want = cfg.bandwidth * math.log2(1 + lam)
        assert user_rate(0, beams, ch, nb, cfg) == pytest.approx(want, rel=1e-6)


def test_rate_invariant_to_receive_rotation():
    rng = np.random.default_rng(9)
    cfg = PhyConfig(n_tx=4, n_rx=2)
    ch, beams, nb = random_instance(rng, U=3)
    q, _ = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    rot = ch @ q
    for u in range(3):
        assert user_rate(u, beams, rot, nb, cfg) == pytest.approx(
            user_rate(u, beams, ch, nb, cfg), rel=1e-9)


def test_rate_monotone_in_own_power():
    rng = np.random.default_rng(4)
    cfg = PhyConfig(n_tx=4, n_rx=2)
    ch, beams, nb = random_instance(rng)
    nb = [{0, 1, 2}, {0, 1, 2}]
    last = -1.0
    for s in np.linspace(0, 3, 20):
        b = beams.beams.copy()
        b[0] *= s
        r = user_rate(0, BeamSet(b), ch, nb, cfg)
        assert r >= last - 1e-6
        last = r


def test_blocked_ap_behind_user():
    geo = layout(6)
    for u in range(6):
        for a in range(3):
            behind = geo.link_azimuth(u, a) + math.pi
            assert a not in nonblocked_aps(HeadPose(1.0, behind % (2 * math.pi)), u, geo)
            facing = geo.link_azimuth(u, a)
            assert a in nonblocked_aps(HeadPose(1.0, facing), u, geo)
    open_geo = Geometry(geo.ap_positions, geo.user_positions, phi_blocked=0.0)
    assert nonblocked_aps(HeadPose(1.0, 0.3), 0, open_geo) == {0, 1, 2}


def test_blockage_invariant_to_full_turns():
    geo = layout(6)
    for phi in np.linspace(0, 2 * math.pi, 37) + 0.0123:
        m = nonblocked_mask(np.full(6, phi), geo)
        assert np.array_equal(m, nonblocked_mask(np.full(6, phi + 2 * math.pi), geo))
        assert np.array_equal(m, nonblocked_mask(np.full(6, phi - 4 * math.pi), geo))


def blocked_sweep_transitions(geo, u, a, steps=3600):
    """Return the sweep indices at which AP a enters or leaves the blocked set."""
    phis = 2 * math.pi * np.arange(steps) / steps
    inside = np.array([a not in nonblocked_aps(HeadPose(1.0, p), u, geo) for p in phis])
    return phis, inside, np.flatnonzero(inside != np.roll(inside, 1))


def check_blockage_sweep(geo, steps=3600):
    """Every transition of every (user, AP) pair sits at phi_ua + pi +- pi/2."""
    half = geo.phi_blocked / 2
    for u in range(geo.n_users):
        for a in range(geo.n_aps):
            phis, inside, idx = blocked_sweep_transitions(geo, u, a, steps)
            assert len(idx) == 2
            centre = geo.link_azimuth(u, a) + math.pi
            edges = [wrap_pi(centre - half), wrap_pi(centre + half)]
            for i in idx:
                # the true edge lies between sample i-1 and sample i
                lo, hi = phis[i - 1] if i else phis[-1] - 2 * math.pi, phis[i]
                hit = [e for e in edges if any(lo - 1e-12 <= e + k * 2 * math.pi <= hi + 1e-12
                                               for k in (-1, 0, 1))]
                assert hit, (u, a, lo, hi, edges)
            # samples inside the region are exactly the ones within half of the centre
            dist = np.abs(np.array([wrap_pi(p - centre) for p in phis]))
            assert np.array_equal(inside, dist < half)
            assert inside.sum() == pytest.approx(steps / 2, abs=2)


def test_blockage_sweep():
    check_blockage_sweep(layout(6))


def test_geometry_validation():
    with pytest.raises(ValueError):
        Geometry(np.array(AP_POSITIONS), [[1, 1, 1.6]], phi_blocked=7.0)
    with pytest.raises(ValueError):
        Geometry([[1, 1, 1.0]], [[2, 2, 1.6]])


def test_project_power():
    cfg = PhyConfig()
    rng = np.random.default_rng(1)
    ok = BeamSet(1e-3 * (rng.standard_normal((2, 3, 6)) + 0j))
    assert np.array_equal(project_power(ok, 1.0).beams, ok.beams)
    b = np.zeros((1, 1, 6), dtype=complex)
    b[0, 0, 0] = math.sqrt(2 * cfg.p_max)
    out = project_power(BeamSet(b), cfg.p_max)
    assert out.ap_power()[0] == pytest.approx(cfg.p_max, rel=1e-12)
    for _ in range(50):
        big = BeamSet(rng.standard_normal((3, 3, 6)) + 1j * rng.standard_normal((3, 3, 6)))
        assert np.all(project_power(big, cfg.p_max).ap_power() <= cfg.p_max + 1e-12)


def test_all_channels_shape():
    geo = layout(6)
    ch = all_channels(geo, PhyConfig())
    assert ch.shape == (6, 3, 6, 2)
    assert np.all(np.isfinite(ch))
