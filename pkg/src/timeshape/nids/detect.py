"""Threshold calibration, alarms and detection reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Threshold:
    value: float
    method: str  # "max" or "percentile"
    percentile: Optional[float] = None
    phi: float = 1.0

    def describe(self) -> str:
        m = "max" if self.method == "max" else f"pctl:{self.percentile:g}"
        return f"{m} phi={self.phi:g} value={self.value:.6g}"


def nearest_rank(values, p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=float))
    if not 0 < p <= 100:
        raise ValueError("percentile must lie in (0, 100]")
    rank = max(1, int(math.ceil(p / 100.0 * len(v))))
    return float(v[rank - 1])


def parse_method(text: str):
    """'max' -> ('max', None); 'pctl:99.5' -> ('percentile', 99.5)."""
    if text == "max":
        return "max", None
    if text.startswith("pctl:"):
        return "percentile", float(text.split(":", 1)[1])
    raise ValueError(f"unknown threshold method {text!r}")


def calibrate_threshold(scores, method: str = "max", percentile: float | None = None,
                        phi: float = 1.0) -> Threshold:
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("no benign scores to calibrate on")
    if method == "max":
        base = float(scores.max())
    elif method == "percentile":
        if percentile is None:
            raise ValueError("percentile calibration needs p")
        base = nearest_rank(scores, percentile)
    else:
        raise ValueError(f"unknown calibration method {method!r}")
    return Threshold(phi * base, method, percentile, phi)


def _rate(hits: np.ndarray, mask: np.ndarray) -> Optional[float]:
    n = int(mask.sum())
    return None if n == 0 else 100.0 * float(hits[mask].sum()) / n


@dataclass
class DetectionReport:
    seq_index: List[int]
    scores: np.ndarray
    labels: List[str]
    threshold: float
    alarms: np.ndarray = field(init=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.alarms = self.scores > self.threshold

    @property
    def dr(self) -> Optional[float]:
        """Percent of malicious-labeled packets that alarm; None when there are none."""
        return _rate(self.alarms, np.array([lab == "malicious" for lab in self.labels], dtype=bool))

    @property
    def fpr(self) -> Optional[float]:
        return _rate(self.alarms, np.array([lab == "benign" for lab in self.labels], dtype=bool))

    def subset(self, label: str) -> "DetectionReport":
        keep = [i for i, lab in enumerate(self.labels) if lab == label]
        return DetectionReport([self.seq_index[i] for i in keep], self.scores[keep],
                               [self.labels[i] for i in keep], self.threshold)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seq_index", "score", "threshold", "alarm", "label"])
            for i, s, a, lab in zip(self.seq_index, self.scores, self.alarms, self.labels):
                w.writerow([i, repr(float(s)), repr(float(self.threshold)), int(a), lab])


def detect(model, threshold, X, labels: Sequence[str], seq_index: Sequence[int] | None = None) -> DetectionReport:
    """Score feature vectors with a trained detector and raise alarms above the threshold."""
    value = threshold.value if isinstance(threshold, Threshold) else float(threshold)
    scores = model.score(X) if model is not None else np.asarray(X, dtype=float)
    if len(labels) != len(scores):
        raise ValueError("label count does not match score count")
    idx = list(range(len(scores))) if seq_index is None else list(seq_index)
    return DetectionReport(idx, scores, list(labels), value)


def format_rate(r: Optional[float]) -> str:
    return "undefined" if r is None else f"{r:.2f}"
