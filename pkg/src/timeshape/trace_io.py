"""Packet records, traces, and their on-disk forms.

Two input formats are understood: classic libpcap captures with an Ethernet
link layer, and a line-oriented canonical text format that is easy to write by
hand and to diff::

    # seq_index timestamp src_mac dst_mac src_ip dst_ip protocol ip_type size label
    0 0.000000 02:00:00:00:00:01 02:00:00:00:00:02 10.0.0.1 10.0.0.2 17 v4 120 benign

Timestamps are seconds since the start of the trace, written with exactly six
fractional digits.  Every trace produced by this package keeps timestamps on
that microsecond grid, so writing and re-reading a trace is lossless.
"""

from __future__ import annotations

import ipaddress
import math
import re
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

LABELS = ("benign", "malicious", "unlabeled")
IP_TYPES = ("v4", "v6", "other")
ORIGINS = ("pcap", "canonical", "synthetic")
SPLIT_ROLES = ("nids_train_benign", "reshaper_train_benign", "malicious_test", "mixed")
BENIGN_ROLES = ("nids_train_benign", "reshaper_train_benign")

ZERO_MAC = "00:00:00:00:00:00"
ZERO_IP = "0.0.0.0"

_MAC_RE = re.compile(r"^[0-9a-f]{2}(:[0-9a-f]{2}){5}$")


class TraceFormatError(ValueError):
    """A trace file or record violates the canonical schema."""

    def __init__(self, message: str, line: int | None = None, index: int | None = None):
        self.line = line
        self.index = index
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def quantize_time(t: float) -> float:
    """Snap a timestamp to the microsecond grid used by the canonical format."""
    return round(float(t), 6)


@dataclass(frozen=True)
class PacketRecord:
    seq_index: int
    timestamp: float
    src_mac: str
    dst_mac: str
    src_ip: str
    dst_ip: str
    protocol: int
    ip_type: str
    size: int
    label: str = "unlabeled"

    def __post_init__(self):
        if self.seq_index < 0:
            raise ValueError(f"seq_index must be >= 0, got {self.seq_index}")
        if not (self.timestamp >= 0.0 and math.isfinite(self.timestamp)):
            raise ValueError(f"timestamp must be finite and >= 0, got {self.timestamp}")
        if self.size < 1:
            raise ValueError(f"size must be >= 1, got {self.size}")
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if self.ip_type not in IP_TYPES:
            raise ValueError(f"unknown ip_type {self.ip_type!r}")
        for mac in (self.src_mac, self.dst_mac):
            if not _MAC_RE.match(mac):
                raise ValueError(f"malformed MAC address {mac!r}")

    def to_line(self) -> str:
        return (
            f"{self.seq_index} {self.timestamp:.6f} {self.src_mac} {self.dst_mac} "
            f"{self.src_ip} {self.dst_ip} {self.protocol} {self.ip_type} {self.size} {self.label}"
        )

    def content_line(self) -> str:
        """Canonical line with the timestamp field removed."""
        fields = self.to_line().split(" ")
        del fields[1]
        return " ".join(fields)


@dataclass
class TrafficTrace:
    records: List[PacketRecord]
    origin: str = "synthetic"
    split_role: str = "mixed"
    truncated: bool = False
    name: str = ""

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.split_role not in SPLIT_ROLES:
            raise ValueError(f"unknown split_role {self.split_role!r}")
        if self.split_role in BENIGN_ROLES:
            for r in self.records:
                if r.label != "benign":
                    raise ValueError(
                        f"trace with role {self.split_role} holds a {r.label} record "
                        f"(seq_index {r.seq_index})"
                    )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def timestamps(self) -> np.ndarray:
        return np.array([r.timestamp for r in self.records], dtype=float)

    def sizes(self) -> np.ndarray:
        return np.array([r.size for r in self.records], dtype=float)

    def labels(self) -> List[str]:
        return [r.label for r in self.records]

    def deltas(self) -> np.ndarray:
        """Inter-packet delays, one shorter than the trace."""
        return np.diff(self.timestamps())

    def with_timestamps(self, timestamps: Sequence[float]) -> "TrafficTrace":
        if len(timestamps) != len(self.records):
            raise ValueError("timestamp count does not match record count")
        recs = [replace(r, timestamp=float(t)) for r, t in zip(self.records, timestamps)]
        return TrafficTrace(recs, origin=self.origin, split_role=self.split_role, name=self.name)

    def with_label(self, label: str) -> "TrafficTrace":
        recs = [replace(r, label=label) for r in self.records]
        role = self.split_role if label == "benign" or self.split_role not in BENIGN_ROLES else "mixed"
        return TrafficTrace(recs, origin=self.origin, split_role=role, name=self.name)

    def require_nonempty(self) -> None:
        if not self.records:
            raise ValueError("trace is empty")


def check_monotone(timestamps: Iterable[float]) -> None:
    """Raise TraceFormatError naming the first index whose timestamp regresses."""
    prev = -math.inf
    for i, t in enumerate(timestamps):
        if t < prev:
            raise TraceFormatError(f"timestamp regresses at index {i} ({t} < {prev})", index=i)
        prev = t


# -- canonical text format ---------------------------------------------------

def _parse_ip(text: str, lineno: int) -> str:
    try:
        return str(ipaddress.ip_address(text))
    except ValueError:
        raise TraceFormatError(f"malformed IP address {text!r}", line=lineno) from None


def parse_line(line: str, lineno: int = 0) -> PacketRecord:
    parts = line.split()
    if len(parts) != 10:
        raise TraceFormatError(f"expected 10 fields, found {len(parts)}", line=lineno)
    seq, ts, smac, dmac, sip, dip, proto, iptype, size, label = parts
    try:
        rec = PacketRecord(
            seq_index=int(seq),
            timestamp=float(ts),
            src_mac=smac.lower(),
            dst_mac=dmac.lower(),
            src_ip=_parse_ip(sip, lineno),
            dst_ip=_parse_ip(dip, lineno),
            protocol=int(proto),
            ip_type=iptype,
            size=int(size),
            label=label,
        )
    except TraceFormatError:
        raise
    except ValueError as exc:
        raise TraceFormatError(str(exc), line=lineno) from None
    return rec


def read_canonical(path) -> TrafficTrace:
    records = []
    prev_ts = -math.inf
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            rec = parse_line(line, lineno)
            if rec.timestamp < prev_ts:
                raise TraceFormatError(
                    f"timestamp regresses at record index {len(records)}",
                    line=lineno,
                    index=len(records),
                )
            prev_ts = rec.timestamp
            records.append(rec)
    return TrafficTrace(records, origin="canonical", name=Path(path).stem)


CANONICAL_HEADER = "# seq_index timestamp src_mac dst_mac src_ip dst_ip protocol ip_type size label"


def write_canonical(trace: TrafficTrace, path) -> None:
    check_monotone(trace.timestamps())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CANONICAL_HEADER + "\n")
        for r in trace.records:
            fh.write(r.to_line() + "\n")


# -- pcap ----------------------------------------------------------------------

LINKTYPE_ETHERNET = 1
_PCAP_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1_000),  # little-endian, microseconds
    b"\xa1\xb2\xc3\xd4": (">", 1_000),
    b"\x4d\x3c\xb2\xa1": ("<", 1),  # nanoseconds
    b"\xa1\xb2\x3c\x4d": (">", 1),
}


def _mac(b: bytes) -> str:
    return ":".join(f"{x:02x}" for x in b)


def decode_ethernet(frame: bytes) -> Tuple[str, str, str, str, int, str]:
    """Return (src_mac, dst_mac, src_ip, dst_ip, protocol, ip_type) for one frame."""
    if len(frame) < 14:
        return ZERO_MAC, ZERO_MAC, ZERO_IP, ZERO_IP, 0, "other"
    dst_mac, src_mac = _mac(frame[0:6]), _mac(frame[6:12])
    ethertype = struct.unpack("!H", frame[12:14])[0]
    off = 14
    while ethertype in (0x8100, 0x88A8) and len(frame) >= off + 4:
        ethertype = struct.unpack("!H", frame[off + 2 : off + 4])[0]
        off += 4
    if ethertype == 0x0800 and len(frame) >= off + 20:
        proto = frame[off + 9]
        src = str(ipaddress.IPv4Address(frame[off + 12 : off + 16]))
        dst = str(ipaddress.IPv4Address(frame[off + 16 : off + 20]))
        return src_mac, dst_mac, src, dst, proto, "v4"
    if ethertype == 0x86DD and len(frame) >= off + 40:
        proto = frame[off + 6]
        src = str(ipaddress.IPv6Address(frame[off + 8 : off + 24]))
        dst = str(ipaddress.IPv6Address(frame[off + 24 : off + 40]))
        return src_mac, dst_mac, src, dst, proto, "v6"
    return src_mac, dst_mac, ZERO_IP, ZERO_IP, 0, "other"


def ingest_pcap(path, label: str = "unlabeled") -> TrafficTrace:
    """Read an Ethernet libpcap capture.

    Timestamps are rebased so the first packet sits at 0.  A capture cut off
    mid-record yields the packets parsed so far with ``truncated`` set.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24:
        raise TraceFormatError("file too short for a pcap global header")
    magic = data[:4]
    if magic not in _PCAP_MAGICS:
        raise TraceFormatError(f"not a libpcap file (magic {magic.hex()})")
    endian, ns_per_tick = _PCAP_MAGICS[magic]
    _, _, _, _, _, linktype = struct.unpack(endian + "HHiIII", data[4:24])
    if linktype != LINKTYPE_ETHERNET:
        raise TraceFormatError(f"unsupported link-layer type {linktype}")

    hdr = struct.Struct(endian + "IIII")
    pos = 24
    truncated = False
    raw = []
    while pos < len(data):
        if pos + hdr.size > len(data):
            truncated = True
            break
        sec, frac, incl_len, orig_len = hdr.unpack_from(data, pos)
        pos += hdr.size
        if pos + incl_len > len(data):
            truncated = True
            break
        frame = data[pos : pos + incl_len]
        pos += incl_len
        t_ns = sec * 1_000_000_000 + frac * ns_per_tick
        raw.append((t_ns, frame, max(orig_len, 1)))

    if not raw:
        raise TraceFormatError("capture holds no packets")

    t0 = raw[0][0]
    records = []
    for i, (t_ns, frame, size) in enumerate(raw):
        us = round((t_ns - t0) / 1_000)
        if us < 0:
            raise TraceFormatError(f"timestamp regresses at packet {i}", index=i)
        smac, dmac, sip, dip, proto, iptype = decode_ethernet(frame)
        records.append(PacketRecord(i, us / 1e6, smac, dmac, sip, dip, proto, iptype, size, label))
    check_monotone(r.timestamp for r in records)
    return TrafficTrace(records, origin="pcap", truncated=truncated, name=Path(path).stem)


def read_trace(path, label: str | None = None) -> TrafficTrace:
    """Read either format, sniffing the pcap magic."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head in _PCAP_MAGICS:
        return ingest_pcap(path, label=label or "unlabeled")
    trace = read_canonical(path)
    return trace.with_label(label) if label else trace


# -- splitting -----------------------------------------------------------------

def rebase(records: Sequence[PacketRecord], origin: str, role: str, name: str = "") -> TrafficTrace:
    """Renumber and shift a run of records so it starts at index 0, time 0."""
    if not records:
        raise ValueError("cannot rebase an empty run of records")
    t0 = records[0].timestamp
    out = [
        replace(r, seq_index=i, timestamp=quantize_time(r.timestamp - t0))
        for i, r in enumerate(records)
    ]
    return TrafficTrace(out, origin=origin, split_role=role, name=name)


def split_trace(
    trace: TrafficTrace, fractions: Tuple[float, float]
) -> Tuple[TrafficTrace, TrafficTrace, TrafficTrace]:
    """Contiguous prefix / middle / suffix split by packet count.

    The first two pieces take ``round(n * frac)`` packets each, the third gets
    the remainder.  Roles are assigned in temporal order: NIDS training,
    reshaper training, test.
    """
    nids_frac, reshaper_frac = fractions
    if nids_frac <= 0 or reshaper_frac <= 0:
        raise ValueError("split fractions must be positive")
    if nids_frac + reshaper_frac > 1.0:
        raise ValueError(f"split fractions sum to {nids_frac + reshaper_frac:g} > 1")
    check_monotone(trace.timestamps())
    n = len(trace)
    n1 = int(round(n * nids_frac))
    n2 = int(round(n * reshaper_frac))
    n3 = n - n1 - n2
    if min(n1, n2, n3) <= 0:
        raise ValueError(f"split of {n} records leaves an empty piece ({n1}/{n2}/{n3})")
    recs = trace.records
    return (
        rebase(recs[:n1], trace.origin, "nids_train_benign", trace.name),
        rebase(recs[n1 : n1 + n2], trace.origin, "reshaper_train_benign", trace.name),
        rebase(recs[n1 + n2 :], trace.origin, "malicious_test", trace.name),
    )
