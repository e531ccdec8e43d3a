"""Discrete-event simulation of a reshaping proxy facing a live target.

The proxy releases malicious packets at the times the reshaper predicts, one
step at a time.  A packet reaches the target after ``base_latency`` plus a
uniform jitter in ``[0, jitter]``.  Response rules let the target answer
matching packets; the answers are seen by the in-line NIDS and travel back to
the proxy, whose reshaper folds each arrival into its history window before
predicting later delays.  The NIDS sits at the target and featurizes traffic
in arrival order.

Event kinds, in tie-break order at equal ``sim_time``:

* ``proxy_send``: the proxy emits malicious packet ``seq_index``
* ``target_receive``: that packet arrives at the target
* ``target_respond``: the target emits a response
* ``proxy_receive``: a response arrives back at the proxy
* ``nids_score``: the NIDS featurizes an arrived packet

Remaining ties go by ``seq_index`` and then insertion order.  Responses are
numbered after the malicious packets and labeled benign.
"""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

import numpy as np

from .nids.detect import DetectionReport, Threshold
from .pipeline import FeatureContext
from .reshaper import ReshaperModel, inject_observation, reshape_step, seed_history
from .seeds import rng_for
from .trace_io import PacketRecord, TrafficTrace, check_monotone, quantize_time

EVENT_KINDS = ("proxy_send", "target_receive", "target_respond", "proxy_receive", "nids_score")
_KIND_ORDER = {k: i for i, k in enumerate(EVENT_KINDS)}
MATCH_FIELDS = ("src_mac", "dst_mac", "src_ip", "dst_ip", "protocol", "ip_type", "size")


class EventQueueOverflow(RuntimeError):
    pass


@dataclass(frozen=True)
class ResponseRule:
    """Answer every ``every``-th packet whose fields equal ``match``, ``delay`` s after receipt.

    The answer swaps source and destination addresses and has ``size`` bytes.
    """

    match: Tuple[Tuple[str, object], ...] = ()
    delay: float = 0.0
    size: int = 64
    every: int = 1

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("response delay must be >= 0")
        if self.every < 1:
            raise ValueError("every must be >= 1")
        for k, _ in self.match:
            if k not in MATCH_FIELDS:
                raise ValueError(f"cannot match on field {k!r}")

    @classmethod
    def from_mapping(cls, m) -> "ResponseRule":
        m = dict(m)
        match = tuple(sorted(dict(m.pop("match", {})).items()))
        return cls(match=match, **m)

    def matches(self, rec: PacketRecord) -> bool:
        return all(getattr(rec, k) == v for k, v in self.match)

    def response_to(self, rec: PacketRecord, seq_index: int, t: float) -> PacketRecord:
        return replace(
            rec, seq_index=seq_index, timestamp=t, src_mac=rec.dst_mac, dst_mac=rec.src_mac,
            src_ip=rec.dst_ip, dst_ip=rec.src_ip, size=int(self.size), label="benign",
        )


@dataclass(frozen=True)
class NetworkModel:
    base_latency: float = 0.0
    jitter: float = 0.0
    response_rules: Tuple[ResponseRule, ...] = ()
    seed: int = 0
    max_events: int = 1_000_000

    def __post_init__(self):
        if self.base_latency < 0 or self.jitter < 0:
            raise ValueError("latency and jitter must be >= 0")
        if self.max_events < 1:
            raise ValueError("max_events must be >= 1")

    @classmethod
    def from_mapping(cls, m) -> "NetworkModel":
        m = dict(m)
        rules = tuple(ResponseRule.from_mapping(r) for r in m.pop("responses", []))
        return cls(response_rules=rules, **m)


@dataclass(frozen=True)
class SimEvent:
    sim_time: float
    kind: str
    seq_index: int
    payload: object = None

    def to_json(self) -> str:
        d = {"sim_time": self.sim_time, "kind": self.kind, "seq_index": self.seq_index}
        if isinstance(self.payload, float):
            d["score"] = self.payload
        return json.dumps(d, sort_keys=True)


@dataclass
class E2eResult:
    report: DetectionReport
    events: List[SimEvent]
    sent: TrafficTrace  # malicious packets with their proxy send times
    arrivals: List[PacketRecord] = field(default_factory=list)  # in NIDS order, arrival timestamps

    def malicious_report(self) -> DetectionReport:
        return self.report.subset("malicious")

    def write_events(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for ev in self.events:
                fh.write(ev.to_json() + "\n")


class _Queue:
    def __init__(self, cap: int):
        self.heap = []
        self.counter = itertools.count()
        self.cap = cap
        self.pushed = 0

    def push(self, t: float, kind: str, seq: int, payload=None):
        self.pushed += 1
        if self.pushed > self.cap:
            raise EventQueueOverflow(f"more than {self.cap} events scheduled; check the response rules")
        heapq.heappush(self.heap, (t, _KIND_ORDER[kind], seq, next(self.counter), payload))

    def pop(self):
        t, k, seq, _, payload = heapq.heappop(self.heap)
        return t, EVENT_KINDS[k], seq, payload

    def __bool__(self):
        return bool(self.heap)


def run_e2e(
    reshaper: ReshaperModel,
    malicious: TrafficTrace,
    net: NetworkModel,
    nids,
    threshold,
    context: FeatureContext,
) -> E2eResult:
    """Simulate the proxy, target and NIDS; score every packet the NIDS sees.

    The NIDS stream is appended to ``context`` with its first arrival mapped
    to the context's continuation point.
    """
    malicious.require_nonempty()
    if len(malicious) < reshaper.window + 1:
        raise ValueError(f"trace of {len(malicious)} packets is too short for window {reshaper.window}")
    recs = malicious.records
    n = len(recs)
    rng = rng_for(net.seed, "netsim-jitter")
    queue = _Queue(net.max_events)
    log: List[SimEvent] = []

    def latency() -> float:
        return net.base_latency + (float(rng.uniform(0.0, net.jitter)) if net.jitter > 0 else 0.0)

    state = seed_history(reshaper, recs[0].timestamp)
    t0, state = reshape_step(reshaper, state, recs[0])
    queue.push(t0, "proxy_send", 0)
    last_seen = t0  # time of the newest entry in the reshaper's window
    send_times = [0.0] * n
    rule_hits = [0] * len(net.response_rules)
    next_resp = n
    packets = {}

    extractor = context.fresh_state()
    offset = None
    arrivals: List[PacketRecord] = []
    rows: List[np.ndarray] = []
    nids_events: List[int] = []

    while queue:
        t, kind, seq, payload = queue.pop()
        log.append(SimEvent(t, kind, seq))
        if kind == "proxy_send":
            rec = recs[seq]
            send_times[seq] = t
            last_seen = max(last_seen, t)
            queue.push(quantize_time(t + latency()), "target_receive", seq, rec)
            if seq + 1 < n:
                t_next, state = reshape_step(reshaper, state, recs[seq + 1])
                queue.push(t_next, "proxy_send", seq + 1)
        elif kind == "target_receive":
            packets[seq] = replace(payload, timestamp=t)
            queue.push(t, "nids_score", seq, packets[seq])
            for r, rule in enumerate(net.response_rules):
                if rule.matches(payload):
                    rule_hits[r] += 1
                    if rule_hits[r] % rule.every == 0:
                        resp = rule.response_to(payload, next_resp, t)
                        queue.push(quantize_time(t + rule.delay), "target_respond", next_resp, resp)
                        next_resp += 1
        elif kind == "target_respond":
            resp = replace(payload, timestamp=t)
            queue.push(t, "nids_score", seq, resp)
            queue.push(quantize_time(t + latency()), "proxy_receive", seq, resp)
        elif kind == "proxy_receive":
            state = inject_observation(reshaper, state, t - last_seen, payload.size)
            last_seen = max(last_seen, t)
        else:  # nids_score
            if offset is None:
                offset = context.offset_for(t)
            row = np.zeros(extractor.n_features)
            extractor._update(payload, offset, row)
            rows.append(row)
            arrivals.append(payload)
            nids_events.append(len(log) - 1)

    X = np.vstack(rows)
    value = threshold.value if isinstance(threshold, Threshold) else float(threshold)
    scores = nids.score(X) if nids is not None else np.zeros(len(X))
    for k, i in enumerate(nids_events):
        ev = log[i]
        log[i] = SimEvent(ev.sim_time, ev.kind, ev.seq_index, float(scores[k]))
    report = DetectionReport([r.seq_index for r in arrivals], scores, [r.label for r in arrivals], value)
    sent = malicious.with_timestamps(send_times)
    return E2eResult(report, log, sent, arrivals)


def replay_schedule(trace: TrafficTrace | Sequence[PacketRecord]) -> List[Tuple[int, float]]:
    """(seq_index, send_at) rows a transmitter can pace against; send_at is the trace time."""
    recs = trace.records if isinstance(trace, TrafficTrace) else list(trace)
    check_monotone([r.timestamp for r in recs])
    return [(r.seq_index, r.timestamp) for r in recs]


def write_schedule(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("seq_index,send_at\n")
        for i, t in rows:
            fh.write(f"{i},{t:.6f}\n")
