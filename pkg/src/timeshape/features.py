"""Streaming packet features from exponentially damped statistics.

Each packet updates one channel in each of four families, keyed by:

* ``src_mac``
* ``src_ip``
* ``ip_pair``  -- (src_ip, dst_ip)
* ``socket``   -- (src_ip, dst_ip, protocol)

A channel keeps, for every decay rate ``lam``, a damped weight, linear sum and
squared sum of packet sizes.  Before folding in a packet seen ``dt`` seconds
after the channel's previous one, all three are multiplied by
``2 ** (-lam * dt)``.  The emitted vector is, family by family and rate by
rate, the (weight, mean, std) of the packet's channel after the update.  Non-IP
packets only touch the MAC family; their IP-keyed slots stay zero.

Cross-channel covariance terms are not computed.
"""

from __future__ import annotations

import copy
import math
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .trace_io import PacketRecord, TrafficTrace

FAMILIES = ("src_mac", "src_ip", "ip_pair", "socket")
STATS = ("weight", "mean", "std")
DEFAULT_LAMBDAS = (5.0, 3.0, 1.0, 0.1, 0.01)
# variances below this fraction of E[x^2] are cancellation noise and read as 0
VAR_NOISE = 1e-12


class DampedStat:
    """Decayed (weight, linear sum, squared sum) for a single rate."""

    __slots__ = ("lam", "w", "ls", "ss", "last_t")

    def __init__(self, lam: float, t0: float = 0.0):
        self.lam = lam
        self.w = 0.0
        self.ls = 0.0
        self.ss = 0.0
        self.last_t = t0

    def decay(self, t: float) -> None:
        dt = t - self.last_t
        if dt < 0:
            raise ValueError(f"time regression: {t} < {self.last_t}")
        if dt > 0:
            f = 2.0 ** (-self.lam * dt)
            self.w *= f
            self.ls *= f
            self.ss *= f
        self.last_t = t

    def insert(self, t: float, x: float) -> None:
        self.decay(t)
        self.w += 1.0
        self.ls += x
        self.ss += x * x

    @property
    def mean(self) -> float:
        return self.ls / self.w if self.w > 0 else 0.0

    @property
    def var(self) -> float:
        if self.w <= 0:
            return 0.0
        m = self.ls / self.w
        msq = self.ss / self.w
        v = msq - m * m
        return v if v > VAR_NOISE * msq else 0.0

    @property
    def std(self) -> float:
        return math.sqrt(self.var)


class ExtractorState:
    """Channel tables for one packet stream.  Strictly sequential."""

    def __init__(self, lambdas: Sequence[float] = DEFAULT_LAMBDAS):
        lambdas = [float(x) for x in lambdas]
        if not lambdas:
            raise ValueError("at least one decay rate is required")
        if any(not (x > 0 and math.isfinite(x)) for x in lambdas):
            raise ValueError("decay rates must be finite and strictly positive")
        self.lambdas = lambdas
        self.n_features = len(FAMILIES) * len(STATS) * len(lambdas)
        # per family: key -> [last_t, w_0, ls_0, ss_0, w_1, ...]
        self.tables: List[dict] = [{} for _ in FAMILIES]
        self.last_time = -math.inf
        self.n_packets = 0

    def copy(self) -> "ExtractorState":
        return copy.deepcopy(self)

    def feature_names(self) -> List[str]:
        return [f"{fam}_l{lam:g}_{st}" for fam in FAMILIES for lam in self.lambdas for st in STATS]

    def update_and_extract(self, record: PacketRecord, time_offset: float = 0.0) -> np.ndarray:
        out = np.zeros(self.n_features)
        self._update(record, time_offset, out)
        return out

    def _update(self, record: PacketRecord, time_offset: float, out: np.ndarray) -> None:
        t = record.timestamp + time_offset
        if t < self.last_time:
            raise ValueError(f"time regression at seq_index {record.seq_index}: {t} < {self.last_time}")
        self.last_time = t
        self.n_packets += 1
        x = float(record.size)
        xx = x * x
        lambdas = self.lambdas
        nl = len(lambdas)
        if record.ip_type == "other":
            keys = (record.src_mac, None, None, None)
        else:
            keys = (
                record.src_mac,
                record.src_ip,
                (record.src_ip, record.dst_ip),
                (record.src_ip, record.dst_ip, record.protocol),
            )
        for fi, key in enumerate(keys):
            if key is None:
                continue
            table = self.tables[fi]
            st = table.get(key)
            if st is None:
                st = [t] + [0.0] * (3 * nl)
                table[key] = st
            dt = t - st[0]
            st[0] = t
            base = fi * 3 * nl
            for li in range(nl):
                j = 1 + 3 * li
                if dt > 0:
                    f = 2.0 ** (-lambdas[li] * dt)
                    w = st[j] * f + 1.0
                    ls = st[j + 1] * f + x
                    ss = st[j + 2] * f + xx
                else:
                    w = st[j] + 1.0
                    ls = st[j + 1] + x
                    ss = st[j + 2] + xx
                st[j], st[j + 1], st[j + 2] = w, ls, ss
                mean = ls / w
                msq = ss / w
                var = msq - mean * mean
                k = base + 3 * li
                out[k] = w
                out[k + 1] = mean
                out[k + 2] = math.sqrt(var) if var > VAR_NOISE * msq else 0.0


def extractor_new(lambdas: Sequence[float] = DEFAULT_LAMBDAS) -> ExtractorState:
    return ExtractorState(lambdas)


def update_and_extract(state: ExtractorState, record: PacketRecord) -> np.ndarray:
    return state.update_and_extract(record)


def featurize(
    trace: TrafficTrace | Sequence[PacketRecord],
    state: ExtractorState | None = None,
    time_offset: float = 0.0,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
) -> np.ndarray:
    """Run a whole trace through an extractor, returning an (n, F) array.

    ``state`` is advanced in place; pass a copy to keep the original.
    """
    if state is None:
        state = ExtractorState(lambdas)
    records = trace.records if isinstance(trace, TrafficTrace) else list(trace)
    out = np.zeros((len(records), state.n_features))
    for i, rec in enumerate(records):
        state._update(rec, time_offset, out[i])
    return out


# -- feature files ---------------------------------------------------------------

def write_features(path, X: np.ndarray, labels: Sequence[str] | None = None,
                   seq_index: Sequence[int] | None = None) -> None:
    """One vector per line, space separated.  Labels go to a ``.labels`` sidecar."""
    X = np.asarray(X, dtype=float)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in X:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    if labels is not None:
        idx = range(len(X)) if seq_index is None else seq_index
        with open(str(path) + ".labels", "w", encoding="utf-8", newline="\n") as fh:
            for i, lab in zip(idx, labels):
                fh.write(f"{i} {lab}\n")


def read_features(path):
    """Return (X, seq_index, labels); labels default to ``unlabeled``."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(v) for v in line.split()])
    if not rows:
        raise ValueError(f"{path}: no feature vectors")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: ragged feature rows")
    X = np.array(rows)
    sidecar = Path(str(path) + ".labels")
    if sidecar.exists():
        seq, labels = [], []
        for line in sidecar.read_text(encoding="utf-8").splitlines():
            if line.strip():
                i, lab = line.split()
                seq.append(int(i))
                labels.append(lab)
        if len(labels) != len(X):
            raise ValueError(f"{sidecar}: label count does not match vectors")
    else:
        seq, labels = list(range(len(X))), ["unlabeled"] * len(X)
    return X, seq, labels
