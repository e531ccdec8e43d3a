import numpy as np
import pytest

from timeshape.synthetic import KINDS, TrafficProfile, generate, load_profile
from timeshape.trace_io import check_monotone


def test_zero_jitter_is_exactly_periodic():
    tr = generate(TrafficProfile("periodic_benign", 5, 0.01, 0.0))
    assert tr.timestamps().tolist() == [0.0, 0.01, 0.02, 0.03, 0.04]


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic_and_valid(kind):
    p = TrafficProfile(kind, 300, 0.01, 0.3, size_mean=500, size_std=200, seed=9)
    a, b = generate(p), generate(p)
    assert a.records == b.records
    check_monotone(a.timestamps())
    assert all(64 <= s <= 1514 for s in a.sizes())
    assert set(a.labels()) == {p.label}


def test_flood_is_ten_times_faster_than_benign():
    ben = generate(TrafficProfile("periodic_benign", 2000, 0.01, 0.2, seed=1))
    att = generate(TrafficProfile("flood_attack", 2000, 0.01, 0.2, seed=2))
    assert np.median(att.deltas()) < 0.1 * np.median(ben.deltas())


@pytest.mark.parametrize("kind", ["scan_attack", "mitm_like"])
def test_other_attacks_mean_delay(kind):
    ben = generate(TrafficProfile("periodic_benign", 20000, 0.01, 0.2, seed=1))
    att = generate(TrafficProfile(kind, 20000, 0.01, 0.2, seed=2))
    assert np.mean(ben.deltas()) == pytest.approx(0.01, rel=0.01)
    assert np.mean(att.deltas()) <= 0.2 * 0.01 * 1.01


def test_bursty_keeps_the_mean_delay():
    tr = generate(TrafficProfile("bursty_benign", 8001, 0.01, 0.0))
    assert np.mean(tr.deltas()) == pytest.approx(0.01, rel=1e-4)


def test_flood_shares_benign_endpoints():
    ben = generate(TrafficProfile("periodic_benign", 40, 0.01, 0.2, seed=1))
    att = generate(TrafficProfile("flood_attack", 40, 0.01, 0.2, seed=2))
    key = lambda r: (r.src_mac, r.dst_mac, r.src_ip, r.dst_ip, r.protocol)
    assert [key(r) for r in ben] == [key(r) for r in att]


def test_scan_fans_out():
    tr = generate(TrafficProfile("scan_attack", 100, 0.01, seed=2))
    assert len({r.dst_ip for r in tr}) == 100


@pytest.mark.parametrize("bad", [
    dict(n_packets=1), dict(base_delta=0.0), dict(jitter=1.0), dict(kind="nope"),
    dict(rate_factor=0.2), dict(schedule="zigzag"),
])
def test_invalid_profiles(bad):
    args = dict(kind="periodic_benign", n_packets=10, base_delta=0.01)
    args.update(bad)
    with pytest.raises(ValueError):
        TrafficProfile(**args)


def test_profile_file(tmp_path):
    p = tmp_path / "p.toml"
    p.write_text('kind = "flood_attack"\nn_packets = 50\nbase_delta = 0.02\nseed = 5\n')
    prof = load_profile(p)
    assert prof == TrafficProfile("flood_attack", 50, 0.02, seed=5)
    p.write_text('kind = "flood_attack"\nn_packets = 50\nbase_delta = 0.02\ncolour = 1\n')
    with pytest.raises(ValueError, match="unknown profile keys"):
        load_profile(p)
