import json

import numpy as np
import pytest

from thz360.config import ConfigError, ExperimentConfig, dump_config, parse_config
from thz360.formats import (FormatError, read_checkpoint, read_smap, read_traces,
                            write_checkpoint, write_smap, write_traces)
from thz360.fusion import great_circle
from thz360.scenario import SaliencyConfig, synth_saliency


def test_config_round_trip():
    cfg = ExperimentConfig()
    assert parse_config(dump_config(cfg)) == cfg
    c2 = parse_config('{"seed": 4, "scenario": {"ap_subset": [0, 2]}, "radio": {"n_tx": 2}}')
    assert c2.seed == 4 and c2.scenario.ap_subset == (0, 2) and c2.radio.n_tx == 2
    assert parse_config(dump_config(c2)) == c2


def test_config_rejects_bad_input():
    with pytest.raises(ConfigError, match=r"train\.hiden: unknown key"):
        parse_config('{"train": {"hiden": 3}}')
    with pytest.raises(ConfigError, match=r"radio\.n_tx"):
        parse_config('{"radio": {"n_tx": "six"}}')
    with pytest.raises(ConfigError, match="policy"):
        parse_config('{"policy": "greedy"}')
    with pytest.raises(ConfigError):
        parse_config("{not json")
    with pytest.raises(ConfigError, match="quality_bitrates"):
        parse_config(json.dumps({"video": {"quality_bitrates": [33e6, 28e6]}}))


def local_maxima(frame):
    H, W = frame.shape
    n = 0
    for r in range(H):
        for c in range(W):
            nb = [frame[rr, (c + dc) % W] for rr, dc in ((r - 1, 0), (r + 1, 0), (r, -1), (r, 1))
                  if 0 <= rr < H]
            n += all(frame[r, c] > v for v in nb)
    return n


def drawn_centres(cfg, seed):
    """Repeat the generator's first draws to recover the component centres."""
    rng = np.random.default_rng(seed)
    th = rng.uniform(0.3 * np.pi, 0.7 * np.pi, cfg.components)
    ph = rng.uniform(0, 2 * np.pi, cfg.components)
    return th, ph


def test_synth_saliency():
    cfg = SaliencyConfig(width=24, height=12, components=2, spread=0.25)
    checked = 0
    for seed in range(30):
        th, ph = drawn_centres(cfg, seed)
        sep = great_circle(th[0], ph[0], th[1], ph[1])
        if sep < 4 * cfg.spread:
            continue  # overlapping bumps merge into one peak
        f = synth_saliency(1, cfg, np.random.default_rng(seed))[0]
        assert local_maxima(f) == 2
        checked += 1
    assert checked >= 20
    still = synth_saliency(5, SaliencyConfig(components=1, drift=0.0), np.random.default_rng(0))
    assert all(np.array_equal(still[0], fr) for fr in still)
    a = synth_saliency(3, cfg, np.random.default_rng(9))
    b = synth_saliency(3, cfg, np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()


def test_format_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    sal = rng.random((3, 4, 8))
    write_smap(tmp_path / "v.smap", sal)
    # maps are stored as float32
    assert np.array_equal(read_smap(tmp_path / "v.smap"), sal.astype(np.float32))
    tr = {(0, 0): rng.uniform(0, 3, (5, 2)), (1, 2): rng.uniform(0, 3, (4, 2))}
    write_traces(tmp_path / "t.csv", tr)
    back = read_traces(tmp_path / "t.csv")
    assert set(back) == set(tr) and all(np.array_equal(back[k], tr[k]) for k in tr)
    p = rng.standard_normal(7)
    write_checkpoint(tmp_path / "m.nnck", "3|fc:2", p)
    spec, q = read_checkpoint(tmp_path / "m.nnck")
    assert spec == "3|fc:2" and np.array_equal(p, q)
    (tmp_path / "bad.smap").write_bytes(b"nope")
    with pytest.raises(FormatError):
        read_smap(tmp_path / "bad.smap")
