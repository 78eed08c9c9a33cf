import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thz360.streaming import (UNBOUNDED, QoEConfig, QualitySelection, UserStreamState,
                              VideoConfig, advance_request, chunk_size_bits, qoe_chunk,
                              rebuffering_delay, round_bitrate, transmission_delay,
                              waiting_time)

VC = VideoConfig()


def test_chunk_size():
    assert chunk_size_bits(QualitySelection(np.zeros(24, int)), VC) == 0.0
    one = np.zeros(24, int)
    one[5] = 1
    assert chunk_size_bits(QualitySelection(one), VC) == pytest.approx(2.8e7, rel=1e-15)


def test_transmission_delay_examples():
    r, T = 5e8, 0.1
    assert transmission_delay([r] * 10, 0.0, T) == 1
    assert transmission_delay([r] * 10, 2.5 * T * r, T) == 3
    assert transmission_delay([r] * 10, T * r, T) == 1
    assert transmission_delay([r] * 3, 10 * T * r, T) == UNBOUNDED


@given(st.lists(st.floats(0, 1e9), min_size=1, max_size=20), st.integers(0, 19),
       st.floats(0, 1e9), st.floats(1e6, 5e8))
def test_transmission_delay_monotone_in_rates(rates, k, extra, bits):
    base = transmission_delay(rates, bits, 0.1)
    more = list(rates)
    more[k % len(rates)] += extra
    assert transmission_delay(more, bits, 0.1) <= base


def test_waiting_time_and_advance_examples():
    st0 = UserStreamState(buffer_slots=0, buffer_threshold=30)
    assert waiting_time(st0, 4, VC) == 0
    nxt = advance_request(st0, 4, 0, VC)
    assert (nxt.t_req, nxt.buffer_slots, nxt.chunk_index) == (4, 10, 1)
    full = UserStreamState(buffer_slots=30, buffer_threshold=30)
    assert waiting_time(full, 1, VC) == 9
    assert advance_request(full, 1, 9, VC).buffer_slots == 30
    roomy = UserStreamState(buffer_slots=5, buffer_threshold=40)
    assert waiting_time(roomy, 1, VC) == 0


def test_rebuffering_examples():
    assert rebuffering_delay(3, 10) == 0
    assert rebuffering_delay(12, 10) == 2
    assert rebuffering_delay(7, 0) == 7


def test_round_bitrate():
    for m, nu in enumerate(VC.quality_bitrates, start=1):
        assert round_bitrate(nu, VC) == m
    assert round_bitrate(33e6, VC) == 2
    assert round_bitrate(30e6, VC) == 1
    assert round_bitrate(1e3, VC) == 1
    assert round_bitrate(1e12, VC) == 5


def test_qoe_examples():
    qc = QoEConfig()
    sel = QualitySelection([3, 3, 3, 0])
    rep = qoe_chunk(sel, {0, 1, 2}, None, 0, qc)
    assert rep.qoe == 3.0 and rep.spatial_var == 0.0 and rep.temporal_switch == 0.0
    rep = qoe_chunk(QualitySelection([2, 4]), {0, 1}, None, 0, qc)
    assert (rep.avg_view_quality, rep.spatial_var) == (3.0, 1.0)
    assert rep.qoe == 2.5
    # unsent tiles in the actual viewport count as level 0
    rep = qoe_chunk(QualitySelection([2, 0]), {0, 1}, 1.0, 0, qc)
    assert rep.avg_view_quality == 1.0
    with pytest.raises(ValueError):
        qoe_chunk(sel, set(), None, 0, qc)


def test_qoe_weighted_penalties_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        qc = QoEConfig(*rng.uniform(0, 2, 3))
        lv = rng.integers(0, 6, 24)
        actual = set(rng.choice(24, rng.integers(1, 10), replace=False).tolist())
        prev = None if rng.random() < 0.2 else float(rng.uniform(0, 5))
        rd = int(rng.integers(0, 5))
        rep = qoe_chunk(QualitySelection(lv), actual, prev, rd, qc)
        vals = [float(lv[n]) for n in sorted(actual)]
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        temp = 0.0 if prev is None else abs(mean - prev)
        want = mean - qc.lambda_spatial * var - qc.lambda_temp * temp - qc.lambda_rd * rd
        assert abs(rep.qoe - want) <= 1e-12


def simulate_slots(buffer0, tds, chunk_slots, threshold):
    """Slot-by-slot playback simulator.

    Returns per-request (t_req, buffer at request, wait). The buffer drains one
    slot per slot while positive; a chunk lands at the end of its last download
    slot; the client idles while the buffer is above the threshold.
    """
    t, buf, out = 0, buffer0, []
    for td in tds:
        out.append((t, buf))
        for _ in range(td):
            buf = max(buf - 1, 0)
            t += 1
        buf += chunk_slots
        wait = 0
        while buf > threshold:
            buf -= 1
            t += 1
            wait += 1
        out[-1] = out[-1] + (wait,)
    return out, t, buf


def check_streaming_recurrences(n_cases=1000, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_cases):
        rows, cols = int(rng.integers(1, 5)), int(rng.integers(1, 7))
        vc = VideoConfig(tile_rows=rows, tile_cols=cols, chunk_slots=int(rng.integers(1, 15)),
                         slot_seconds=float(rng.choice([0.05, 0.1, 0.2])))
        threshold = int(rng.integers(vc.chunk_slots, 4 * vc.chunk_slots + 1))
        rate = float(rng.uniform(2e7, 2e9))
        tds = []
        state = UserStreamState(buffer_slots=0, buffer_threshold=threshold)
        for _ in range(int(rng.integers(1, 12))):
            lv = rng.integers(0, vc.n_levels + 1, vc.n_tiles)
            lv[rng.integers(vc.n_tiles)] = max(lv.max(), 1)
            bits = chunk_size_bits(QualitySelection(lv), vc)
            td = transmission_delay([rate] * 1000, bits, vc.slot_seconds)
            assert td == math.ceil(bits / (vc.slot_seconds * rate))
            tds.append(td)
        sim, t_end, buf_end = simulate_slots(0, tds, vc.chunk_slots, threshold)
        for (t_req, buf, wait), td in zip(sim, tds):
            assert state.buffer_slots <= threshold
            assert (state.t_req, state.buffer_slots) == (t_req, buf)
            wt = waiting_time(state, td, vc)
            assert wt == wait
            state = advance_request(state, td, wt, vc)
        assert (state.t_req, state.buffer_slots) == (t_end, buf_end)
        assert state.buffer_slots <= threshold


def test_streaming_recurrences_match_slot_simulator():
    check_streaming_recurrences()


@settings(max_examples=200)
@given(st.integers(0, 60), st.integers(1, 40), st.integers(1, 20), st.integers(0, 60))
def test_wait_keeps_buffer_under_threshold(buf, td, chunk, extra):
    vc = VideoConfig(chunk_slots=chunk)
    thr = chunk + extra
    s = UserStreamState(buffer_slots=min(buf, thr), buffer_threshold=thr)
    nxt = advance_request(s, td, waiting_time(s, td, vc), vc)
    assert 0 <= nxt.buffer_slots <= thr


def test_video_config_validation():
    with pytest.raises(ValueError):
        VideoConfig(quality_bitrates=(33e6, 28e6))
    with pytest.raises(ValueError):
        QoEConfig(lambda_rd=-1.0)
