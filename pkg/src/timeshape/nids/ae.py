"""Dense autoencoder detector: F -> 100 -> 64 -> 32 -> 64 -> 100 -> F.

Hidden layers use ReLU, the output layer is linear.  Inputs are min-max
scaled with bounds taken from the training features; the anomaly score is the
RMSE between a scaled vector and its reconstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..seeds import rng_for
from .common import AdamState, MinMaxScaler, NaNLossError, rmse, rmse_rows

HIDDEN_LAYERS = (100, 64, 32, 64, 100)


def layer_sizes(n_features: int, hidden=HIDDEN_LAYERS) -> List[int]:
    return [n_features, *hidden, n_features]


def init_weights(sizes, seed: int):
    rng = rng_for(seed, "ae-init")
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Ws, bs


def reconstruct(Ws, bs, X, keep=False):
    a = np.asarray(X, dtype=float)
    acts = [a]
    pre = []
    last = len(Ws) - 1
    for k, (W, b) in enumerate(zip(Ws, bs)):
        z = a @ W + b
        a = z if k == last else np.maximum(z, 0.0)
        if keep:
            pre.append(z)
            acts.append(a)
    return (a, pre, acts) if keep else a


def mse_and_grads(Ws, bs, X):
    """Mean (over batch and features) squared reconstruction error and gradients."""
    out, pre, acts = reconstruct(Ws, bs, X, keep=True)
    B, F = X.shape
    diff = out - X
    loss = float(np.mean(diff * diff))
    delta = (2.0 / (B * F)) * diff
    gW, gb = [None] * len(Ws), [None] * len(Ws)
    for k in range(len(Ws) - 1, -1, -1):
        if k != len(Ws) - 1:
            delta = delta * (pre[k] > 0)
        gW[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            delta = delta @ Ws[k].T
    return loss, gW, gb


@dataclass
class AeModel:
    Ws: List[np.ndarray]
    bs: List[np.ndarray]
    scaler: MinMaxScaler
    losses: List[float] = field(default_factory=list)
    kind: str = "ae"

    @property
    def n_features(self) -> int:
        return self.Ws[0].shape[0]

    def score(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        Z = self.scaler.transform(X)
        return rmse_rows(Z, reconstruct(self.Ws, self.bs, Z))

    def to_dict(self):
        return {
            "kind": "ae",
            "Ws": [w.tolist() for w in self.Ws],
            "bs": [b.tolist() for b in self.bs],
            "scaler": self.scaler.to_dict(),
            "losses": list(self.losses),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            [np.array(w, dtype=float) for w in d["Ws"]],
            [np.array(b, dtype=float) for b in d["bs"]],
            MinMaxScaler.from_dict(d["scaler"]),
            list(d.get("losses", [])),
        )


def ae_train(X, epochs: int = 5, lr: float = 0.001, batch_size: int = 32, seed: int = 0,
             hidden=HIDDEN_LAYERS) -> AeModel:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("need a non-empty (n, F) training matrix")
    scaler = MinMaxScaler.fit(X)
    Z = scaler.transform(X)
    Ws, bs = init_weights(layer_sizes(X.shape[1], hidden), seed)
    opt = AdamState(Ws + bs, lr=lr)
    rng = rng_for(seed, "ae-shuffle")
    losses = []
    n = len(Z)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, batch_size)):
            batch = Z[order[start : start + batch_size]]
            loss, gW, gb = mse_and_grads(Ws, bs, batch)
            if not math.isfinite(loss):
                raise NaNLossError("autoencoder", epoch, bi)
            total += loss * len(batch)
            opt.step(Ws + bs, gW + gb)
        losses.append(total / n)
    return AeModel(Ws, bs, scaler, losses)


def ae_score(model: AeModel, x) -> float:
    x = np.asarray(x, dtype=float)
    z = model.scaler.transform(x[None])[0]
    return rmse(z, reconstruct(model.Ws, model.bs, z[None])[0])
