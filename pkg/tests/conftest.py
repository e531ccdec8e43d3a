import sys

import numpy as np
import pytest

from timeshape.synthetic import TrafficProfile, generate
from timeshape.trace_io import PacketRecord, TrafficTrace, quantize_time


def random_records(n, seed=0, label="benign"):
    rng = np.random.default_rng(seed)
    t = np.cumsum(rng.exponential(0.01, size=n))
    recs = []
    prev = 0.0
    for i in range(n):
        a, b = rng.integers(1, 6, size=2)
        ts = max(quantize_time(t[i]), prev)
        prev = ts
        recs.append(PacketRecord(
            seq_index=i, timestamp=ts,
            src_mac=f"02:00:00:00:00:{a:02x}", dst_mac=f"02:00:00:00:00:{b:02x}",
            src_ip=f"10.0.0.{a}", dst_ip=f"10.0.0.{b}",
            protocol=int(rng.choice([6, 17])), ip_type="v4",
            size=int(rng.integers(64, 1515)), label=label,
        ))
    return recs


@pytest.fixture
def small_benign():
    return generate(TrafficProfile("periodic_benign", 400, 0.01, 0.2, size_mean=300, size_std=40, seed=3))


@pytest.fixture
def small_flood():
    return generate(TrafficProfile("flood_attack", 120, 0.01, 0.2, size_mean=300, seed=4))


@pytest.fixture
def random_trace():
    return TrafficTrace(random_records(300, seed=5))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
