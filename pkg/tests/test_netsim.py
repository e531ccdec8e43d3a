import json

import numpy as np
import pytest

from timeshape.netsim import (
    EVENT_KINDS, EventQueueOverflow, NetworkModel, ResponseRule, replay_schedule, run_e2e, write_schedule,
)
from timeshape.nids import iforest_fit
from timeshape.pipeline import FeatureContext
from timeshape.reshaper import fit_reshaper, init_params, reshape_offline
from timeshape.synthetic import TrafficProfile, generate
from timeshape.trace_io import TrafficTrace

LAMS = [5, 1, 0.1]


@pytest.fixture(scope="module")
def setup():
    ben = generate(TrafficProfile("periodic_benign", 1500, 0.01, 0.2, size_mean=300, seed=11))
    reshaper, _ = fit_reshaper(ben, 5, epochs=1, seed=1)
    ctx = FeatureContext(TrafficTrace(ben.records[:1000]), LAMS)
    nids = iforest_fit(ctx.context_features, n_trees=20, psi=128, seed=2)
    mal = generate(TrafficProfile("flood_attack", 120, 0.01, 0.2, size_mean=300, seed=12))
    return reshaper, ctx, nids, mal


def live_reshaper(reshaper):
    m = reshaper.copy()
    m.params = init_params(11)
    return m


def test_degenerate_network_equals_offline_path(setup):
    reshaper, ctx, nids, mal = setup
    res = run_e2e(reshaper, mal, NetworkModel(), nids, 0.6, ctx)
    offline = reshape_offline(reshaper, mal)
    assert [r.timestamp for r in res.arrivals] == offline.timestamps().tolist()
    assert res.sent.records == offline.records
    assert np.array_equal(res.report.scores, nids.score(ctx.features(offline)))
    assert res.report.labels == ["malicious"] * len(mal)


def test_responses_feed_back_into_the_reshaper(setup):
    reshaper, ctx, nids, mal = setup
    model = live_reshaper(reshaper)
    quiet = run_e2e(model, mal, NetworkModel(base_latency=0.001), nids, 0.6, ctx)
    rule = ResponseRule.from_mapping({"match": {"dst_ip": "10.0.0.0"}, "delay": 0.002, "size": 900})
    net = NetworkModel(base_latency=0.001, response_rules=(rule,))
    busy = run_e2e(model, mal, net, nids, 0.6, ctx)
    n_resp = sum(r.dst_ip == "10.0.0.0" for r in mal)
    assert len(busy.arrivals) == len(mal) + n_resp
    resp = [r for r in busy.arrivals if r.seq_index >= len(mal)]
    assert all(r.label == "benign" and r.size == 900 and r.src_ip == "10.0.0.0" for r in resp)
    assert busy.sent.timestamps().tolist() != quiet.sent.timestamps().tolist()
    assert busy.malicious_report().labels == ["malicious"] * len(mal)
    assert busy.report.fpr is not None


def test_every_nth_match_answered(setup):
    reshaper, ctx, nids, mal = setup
    rule = ResponseRule(match=(("dst_ip", "10.0.0.0"),), every=7)
    res = run_e2e(reshaper, mal, NetworkModel(response_rules=(rule,)), nids, 0.6, ctx)
    n_match = sum(r.dst_ip == "10.0.0.0" for r in mal)
    assert len(res.arrivals) - len(mal) == n_match // 7


def test_event_log_order_and_causality(setup, tmp_path):
    reshaper, ctx, nids, mal = setup
    rule = ResponseRule(match=(("dst_ip", "10.0.0.0"),), delay=0.001, every=3)
    net = NetworkModel(base_latency=0.002, jitter=0.001, response_rules=(rule,), seed=5)
    res = run_e2e(live_reshaper(reshaper), mal, net, nids, 0.6, ctx)
    order = {k: i for i, k in enumerate(EVENT_KINDS)}
    keys = [(e.sim_time, order[e.kind]) for e in res.events]
    assert keys == sorted(keys)
    first = {}
    for e in res.events:
        first.setdefault((e.kind, e.seq_index), e.sim_time)
    n = len(mal)
    for i in range(n):
        send, recv = first[("proxy_send", i)], first[("target_receive", i)]
        assert 0.002 - 1e-9 <= recv - send <= 0.003 + 1e-9
        assert first[("nids_score", i)] == recv
    for (kind, i), t in first.items():
        if kind == "target_respond":
            assert t >= 0.001 - 1e-9 and first[("nids_score", i)] == t and first[("proxy_receive", i)] > t
    res.write_events(tmp_path / "ev.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "ev.jsonl").read_text().splitlines()]
    assert len(rows) == len(res.events)
    assert all(("score" in r) == (r["kind"] == "nids_score") for r in rows)


def test_jitter_is_seeded(setup):
    reshaper, ctx, nids, mal = setup
    net = NetworkModel(base_latency=0.001, jitter=0.002, seed=9)
    a = run_e2e(reshaper, mal, net, nids, 0.6, ctx)
    b = run_e2e(reshaper, mal, net, nids, 0.6, ctx)
    assert [e.sim_time for e in a.events] == [e.sim_time for e in b.events]


def test_event_cap(setup):
    reshaper, ctx, nids, mal = setup
    with pytest.raises(EventQueueOverflow):
        run_e2e(reshaper, mal, NetworkModel(max_events=50), nids, 0.6, ctx)


def test_bad_network_config():
    with pytest.raises(ValueError):
        NetworkModel(base_latency=-1)
    with pytest.raises(ValueError):
        ResponseRule(match=(("port", 80),))
    with pytest.raises(ValueError):
        ResponseRule(every=0)


def test_replay_schedule(tmp_path, small_flood):
    rows = replay_schedule(small_flood)
    assert rows[:2] == [(0, small_flood[0].timestamp), (1, small_flood[1].timestamp)]
    write_schedule([(0, 0.0), (1, 0.0015)], tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text() == "seq_index,send_at\n0,0.000000\n1,0.001500\n"
    recs = list(small_flood.records[:3])
    with pytest.raises(ValueError):
        replay_schedule([recs[1], recs[0]])
