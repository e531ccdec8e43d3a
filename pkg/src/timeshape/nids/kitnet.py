"""KitNET-style ensemble of small autoencoders.

Features are grouped by hierarchical clustering on correlation distance
``1 - |corr|``.  Each group gets a tied-weight sigmoid autoencoder with hidden
width ``ceil(0.75 * group size)``; the per-group reconstruction RMSEs form the
input of one more autoencoder, whose RMSE is the anomaly score.  Every
autoencoder min-max scales its own inputs with bounds from training data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import linkage, to_tree
from scipy.spatial.distance import squareform

from ..seeds import rng_for
from .common import MinMaxScaler, NaNLossError, has_spread, rmse_rows

MAX_CLUSTER = 10
HIDDEN_RATIO = 0.75
LEARNING_RATE = 0.1
MAX_LINK_DISTANCE = 0.8


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def kitnet_build_map(X, max_size: int = MAX_CLUSTER, max_distance: float = MAX_LINK_DISTANCE) -> List[List[int]]:
    """Partition feature indices into correlated groups of at most ``max_size``.

    A dendrogram node becomes a group once it holds ``max_size`` features or
    fewer and its merge distance does not exceed ``max_distance``; otherwise
    it is split into its two children.  Zero-variance features are set apart
    and chunked into groups of their own.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least 2 feature vectors to build a map")
    F = X.shape[1]
    varies = has_spread(X.min(axis=0), X.max(axis=0))
    const = [j for j in range(F) if not varies[j]]
    live = [j for j in range(F) if varies[j]]
    groups: List[List[int]] = []
    if len(live) == 1:
        groups.append(live)
    elif live:
        C = np.corrcoef(X[:, live], rowvar=False)
        D = 1.0 - np.abs(np.nan_to_num(C))
        D = np.clip((D + D.T) / 2.0, 0.0, 1.0)
        np.fill_diagonal(D, 0.0)
        root = to_tree(linkage(squareform(D, checks=False), method="single"))
        stack = [root]
        while stack:
            node = stack.pop()
            if node.is_leaf() or (node.get_count() <= max_size and node.dist <= max_distance):
                groups.append(sorted(live[i] for i in node.pre_order()))
            else:
                stack.extend([node.get_right(), node.get_left()])
    for k in range(0, len(const), max_size):
        groups.append(const[k : k + max_size])
    groups.sort(key=lambda g: g[0])
    return groups


@dataclass
class TiedAE:
    """Sigmoid autoencoder with tied weights, trained by SGD on squared error."""

    W: np.ndarray  # (n_visible, n_hidden)
    hb: np.ndarray
    vb: np.ndarray
    scaler: Optional[MinMaxScaler] = None

    @classmethod
    def new(cls, n_visible: int, seed: int, name: str, index: int = 0, ratio: float = HIDDEN_RATIO):
        n_hidden = max(1, int(math.ceil(ratio * n_visible)))
        rng = rng_for(seed, name, index)
        a = 1.0 / n_visible
        return cls(rng.uniform(-a, a, size=(n_visible, n_hidden)), np.zeros(n_hidden), np.zeros(n_visible))

    def reconstruct_scaled(self, Z):
        h = _sigmoid(Z @ self.W + self.hb)
        return _sigmoid(h @ self.W.T + self.vb)

    def score(self, X) -> np.ndarray:
        Z = self.scaler.transform(X)
        return rmse_rows(Z, self.reconstruct_scaled(Z))

    def loss_and_grads(self, Z):
        """Mean squared error over batch and features, with tied-weight gradients."""
        B, n = Z.shape
        h = _sigmoid(Z @ self.W + self.hb)
        y = _sigmoid(h @ self.W.T + self.vb)
        diff = y - Z
        loss = float(np.mean(diff * diff))
        dzo = (2.0 / (B * n)) * diff * y * (1.0 - y)  # (B, n)
        dh = (dzo @ self.W) * h * (1.0 - h)  # (B, k)
        gW = Z.T @ dh + dzo.T @ h
        return loss, gW, dh.sum(axis=0), dzo.sum(axis=0)

    def fit(self, X, epochs: int, lr: float, batch_size: int, rng, what: str = "kitnet"):
        self.scaler = MinMaxScaler.fit(X)
        Z = self.scaler.transform(X)
        n = len(Z)
        for epoch in range(epochs):
            order = rng.permutation(n)
            for bi, start in enumerate(range(0, n, batch_size)):
                loss, gW, ghb, gvb = self.loss_and_grads(Z[order[start : start + batch_size]])
                if not math.isfinite(loss):
                    raise NaNLossError(what, epoch, bi)
                self.W -= lr * gW
                self.hb -= lr * ghb
                self.vb -= lr * gvb
        return self

    def to_dict(self):
        return {"W": self.W.tolist(), "hb": self.hb.tolist(), "vb": self.vb.tolist(),
                "scaler": self.scaler.to_dict()}

    @classmethod
    def from_dict(cls, d):
        W = np.array(d["W"], dtype=float).reshape(len(d["vb"]), len(d["hb"]))
        return cls(W, np.array(d["hb"], dtype=float), np.array(d["vb"], dtype=float),
                   MinMaxScaler.from_dict(d["scaler"]))


@dataclass
class KitnetModel:
    feature_map: List[List[int]]
    ensemble: List[TiedAE]
    output: TiedAE
    kind: str = "kitnet"

    @property
    def n_features(self) -> int:
        return sum(len(g) for g in self.feature_map)

    def cluster_scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return np.column_stack([ae.score(X[:, g]) for g, ae in zip(self.feature_map, self.ensemble)])

    def score(self, X) -> np.ndarray:
        return self.output.score(self.cluster_scores(X))

    def to_dict(self):
        return {
            "kind": "kitnet",
            "feature_map": self.feature_map,
            "ensemble": [ae.to_dict() for ae in self.ensemble],
            "output": self.output.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls([list(g) for g in d["feature_map"]], [TiedAE.from_dict(e) for e in d["ensemble"]],
                   TiedAE.from_dict(d["output"]))


def kitnet_train(X, feature_map: Optional[Sequence[Sequence[int]]] = None, epochs: int = 1,
                 lr: float = LEARNING_RATE, batch_size: int = 1, seed: int = 0) -> KitnetModel:
    """Train the ensemble layer, then the output autoencoder on its RMSEs."""
    X = np.asarray(X, dtype=float)
    fmap = [list(g) for g in (feature_map if feature_map is not None else kitnet_build_map(X))]
    covered = sorted(j for g in fmap for j in g)
    if covered != list(range(X.shape[1])):
        raise ValueError("feature map must partition the feature indices")
    rng = rng_for(seed, "kitnet-shuffle")
    ensemble = []
    for k, g in enumerate(fmap):
        ae = TiedAE.new(len(g), seed, "kitnet-ensemble", k)
        ensemble.append(ae.fit(X[:, g], epochs, lr, batch_size, rng))
    partial = KitnetModel(fmap, ensemble, None)
    S = partial.cluster_scores(X)
    output = TiedAE.new(S.shape[1], seed, "kitnet-output").fit(S, epochs, lr, batch_size, rng)
    return KitnetModel(fmap, ensemble, output)


def kitnet_score(model: KitnetModel, x) -> float:
    return float(model.score(np.asarray(x, dtype=float)[None])[0])
