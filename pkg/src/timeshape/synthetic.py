"""Labeled synthetic traffic with controllable timing.

Every trace is drawn from numpy's PCG64 generator seeded with the profile's
``seed``, so a profile always produces the same packets.

Hosts are numbered; host ``h`` has MAC ``02:00:00:00:HH:HH`` and IP
``10.0.HH.HH`` (the 16-bit host number split into two octets).  Host 0 is the
server/gateway.  A pool of ``endpoint_pool`` conversations links hosts
``1..pool`` to host 0.  Under the default ``round_robin`` schedule packets
alternate request (client to server) and response (server to client) while
cycling through the conversations; the ``random`` schedule picks conversation
and direction uniformly per packet.  Profiles with the same pool size and
schedule share addresses and channel order, which is what lets a pure timing
attack hide among benign traffic.

Timing by kind (``base`` is ``base_delta``, ``u`` is uniform on [-1, 1]):

=================  ==========================================  ===============================
kind               inter-packet delay                          other structure
=================  ==========================================  ===============================
periodic_benign    base * (1 + jitter*u)                        none
bursty_benign      bursts of 8 at 0.25*base, gaps so the        none
                   mean delay stays at base
flood_attack       rate_factor * base * (1 + jitter*u),         same endpoints as benign
                   rate_factor <= 0.1 (default 0.05)
scan_attack        0.1 * base * (1 + jitter*u)                  host 1 probes a fresh dst IP per packet
mitm_like          0.2 * base * (1 + jitter*u)                  attacker MAC answers for pool IPs
=================  ==========================================  ===============================

The expected attack delay is at most 0.2x ``base_delta`` (0.1x for floods),
against exactly ``base_delta`` for both benign kinds.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Tuple

import numpy as np

from .trace_io import PacketRecord, TrafficTrace, quantize_time

KINDS = ("periodic_benign", "bursty_benign", "flood_attack", "scan_attack", "mitm_like")
BENIGN_KINDS = ("periodic_benign", "bursty_benign")
SCHEDULES = ("round_robin", "random")
MIN_SIZE, MAX_SIZE = 64, 1514

ATTACKER_MAC = "02:ff:ff:ff:ff:01"
BURST_LEN = 8
BURST_GAP_FACTOR = 0.25


@dataclass(frozen=True)
class TrafficProfile:
    kind: str
    n_packets: int
    base_delta: float
    jitter: float = 0.0
    size_mean: float = 200.0
    size_std: float = 0.0
    endpoint_pool: int = 4
    seed: int = 0
    protocol: int = 17
    rate_factor: float = 0.05
    schedule: str = "round_robin"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.n_packets < 2:
            raise ValueError("n_packets must be >= 2")
        if not self.base_delta > 0:
            raise ValueError("base_delta must be > 0")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")
        if self.endpoint_pool < 1:
            raise ValueError("endpoint_pool must be >= 1")
        if self.size_std < 0:
            raise ValueError("size_std must be >= 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not 0 < self.rate_factor <= 0.1:
            raise ValueError("flood rate_factor must lie in (0, 0.1]")

    @property
    def size_distribution(self) -> Tuple[float, float]:
        return (self.size_mean, self.size_std)

    @property
    def label(self) -> str:
        return "benign" if self.kind in BENIGN_KINDS else "malicious"

    @classmethod
    def from_mapping(cls, mapping) -> "TrafficProfile":
        known = {f.name for f in fields(cls)}
        extra = set(mapping) - known
        if extra:
            raise ValueError(f"unknown profile keys: {sorted(extra)}")
        return cls(**dict(mapping))

    def to_mapping(self) -> dict:
        return asdict(self)


def host_mac(h: int) -> str:
    return f"02:00:00:00:{(h >> 8) & 0xFF:02x}:{h & 0xFF:02x}"


def host_ip(h: int) -> str:
    return f"10.0.{(h >> 8) & 0xFF}.{h & 0xFF}"


def _jittered(rng, n, mean, jitter):
    if jitter == 0:
        return np.full(n, mean)
    return mean * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=n))


def _deltas(profile: TrafficProfile, rng) -> np.ndarray:
    n = profile.n_packets - 1
    base = profile.base_delta
    kind = profile.kind
    if kind == "periodic_benign":
        return _jittered(rng, n, base, profile.jitter)
    if kind == "bursty_benign":
        short = BURST_GAP_FACTOR * base
        # BURST_LEN-1 short gaps + one long gap average to base
        long_gap = BURST_LEN * base - (BURST_LEN - 1) * short
        pattern = np.where((np.arange(n) + 1) % BURST_LEN == 0, long_gap, short)
        return pattern * (1.0 + profile.jitter * rng.uniform(-1.0, 1.0, size=n)) if profile.jitter else pattern
    if kind == "flood_attack":
        return _jittered(rng, n, profile.rate_factor * base, profile.jitter)
    if kind == "scan_attack":
        return _jittered(rng, n, 0.1 * base, profile.jitter)
    return _jittered(rng, n, 0.2 * base, profile.jitter)


def generate(profile: TrafficProfile) -> TrafficTrace:
    rng = np.random.Generator(np.random.PCG64(profile.seed))
    n = profile.n_packets
    deltas = _deltas(profile, rng)
    times = np.concatenate([[0.0], np.cumsum(deltas)])

    if profile.size_std > 0:
        sizes = rng.normal(profile.size_mean, profile.size_std, size=n)
    else:
        sizes = np.full(n, profile.size_mean)
    sizes = np.clip(np.rint(sizes), MIN_SIZE, MAX_SIZE).astype(int)

    if profile.schedule == "round_robin":
        steps = np.arange(n)
        conv = (steps // 2) % profile.endpoint_pool + 1
        outbound = steps % 2 == 0
    else:
        conv = rng.integers(1, profile.endpoint_pool + 1, size=n)
        outbound = rng.random(n) < 0.5
    label = profile.label

    records = []
    prev = 0.0
    for i in range(n):
        client = int(conv[i])
        if profile.kind == "scan_attack":
            src_h, dst_h = 1, 1000 + i
            smac, dmac = host_mac(src_h), host_mac(0)
        elif profile.kind == "mitm_like":
            src_h, dst_h = (client, 0) if outbound[i] else (0, client)
            smac, dmac = ATTACKER_MAC, host_mac(dst_h)
        else:
            src_h, dst_h = (client, 0) if outbound[i] else (0, client)
            smac, dmac = host_mac(src_h), host_mac(dst_h)
        # quantization can only collapse a delay to zero, never reverse order
        t = max(quantize_time(times[i]), prev)
        prev = t
        records.append(
            PacketRecord(
                seq_index=i,
                timestamp=t,
                src_mac=smac,
                dst_mac=dmac,
                src_ip=host_ip(src_h),
                dst_ip=host_ip(dst_h),
                protocol=profile.protocol,
                ip_type="v4",
                size=int(sizes[i]),
                label=label,
            )
        )
    return TrafficTrace(records, origin="synthetic", name=profile.kind)


def load_profile(path) -> TrafficProfile:
    from .config import load_config

    return TrafficProfile.from_mapping(load_config(path))
