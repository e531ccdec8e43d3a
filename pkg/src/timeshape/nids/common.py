from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def rmse(x, y) -> float:
    """Root mean square error between two equal-length vectors."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size == 0:
        raise ValueError("rmse of empty vectors")
    d = x - y
    return math.sqrt(float(np.dot(d, d)) / x.size)


def rmse_rows(X, Y) -> np.ndarray:
    d = np.asarray(X, dtype=float) - np.asarray(Y, dtype=float)
    return np.sqrt(np.mean(d * d, axis=1))


# ranges narrower than this fraction of the values' magnitude are float roundoff
SPAN_RESOLUTION = 1e-9


def has_spread(lo, hi) -> np.ndarray:
    """True where [lo, hi] is wider than roundoff, i.e. the feature actually varies."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return (hi - lo) > SPAN_RESOLUTION * np.maximum(np.abs(lo), np.abs(hi))


@dataclass
class MinMaxScaler:
    """Per-dimension min-max scaling fitted on training data, not clipped at inference.

    Dimensions without real spread (see ``has_spread``) are only shifted.
    """

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X) -> "MinMaxScaler":
        X = np.asarray(X, dtype=float)
        return cls(X.min(axis=0), X.max(axis=0))

    def transform(self, X) -> np.ndarray:
        span = self.hi - self.lo
        span = np.where(has_spread(self.lo, self.hi), span, 1.0)
        return (np.asarray(X, dtype=float) - self.lo) / span

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["lo"], dtype=float), np.array(d["hi"], dtype=float))


class AdamState:
    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class NaNLossError(RuntimeError):
    def __init__(self, what: str, epoch: int, batch: int):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"{what}: loss became NaN at epoch {epoch}, batch {batch}")
