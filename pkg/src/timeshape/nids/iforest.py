"""Isolation forest with the classic path-length anomaly score.

Each tree isolates a subsample of ``psi`` training vectors by repeatedly
picking a feature (uniformly among those that vary in the node beyond roundoff) and a
threshold drawn uniformly from that feature's range in the node.  Growth stops
at height ``ceil(log2 psi)`` or when a node holds one point.  A point's path
length is the depth of the leaf it lands in plus ``c(leaf size)``, and the
score is ``2 ** (-mean path length / c(psi))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.special import digamma

from ..seeds import rng_for
from .common import has_spread

N_TREES = 100
DEFAULT_PSI = 256


def harmonic(n) -> np.ndarray:
    """H(n) = 1 + 1/2 + ... + 1/n, with H(0) = 0."""
    n = np.asarray(n, dtype=float)
    return np.where(n > 0, digamma(n + 1.0) + np.euler_gamma, 0.0)


def c_factor(m) -> np.ndarray:
    """Average unsuccessful-search path length in a BST of ``m`` nodes."""
    m = np.asarray(m, dtype=float)
    big = 2.0 * harmonic(np.maximum(m - 1.0, 0.0)) - 2.0 * (m - 1.0) / np.maximum(m, 1.0)
    return np.where(m > 2, big, np.where(m == 2, 1.0, 0.0))


def score_from_path(mean_path, psi) -> np.ndarray:
    return np.power(2.0, -np.asarray(mean_path, dtype=float) / float(c_factor(psi)))


@dataclass
class IsoTree:
    feature: np.ndarray  # -1 for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray  # training points that reached the node
    depth: np.ndarray
    sample: np.ndarray  # indices of the subsample in the training set

    def leaf_index(self, X) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] < self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.feature[node[idx]] >= 0
        return node

    def path_length(self, X) -> np.ndarray:
        leaf = self.leaf_index(X)
        return self.depth[leaf] + c_factor(self.size[leaf])

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "size", "depth", "sample")}

    @classmethod
    def from_dict(cls, d):
        ints = ("feature", "left", "right", "size", "depth", "sample")
        return cls(**{k: np.array(v, dtype=int if k in ints else float) for k, v in d.items()})


def grow_tree(X: np.ndarray, sample: np.ndarray, height_limit: int, rng) -> IsoTree:
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(n, d):
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (size, n), (depth, d)):
            lst.append(v)
        return len(feature) - 1

    root = new_node(len(sample), 0)
    stack = [(root, sample, 0)]
    while stack:
        nid, rows, d = stack.pop()
        if d >= height_limit or len(rows) <= 1:
            continue
        sub = X[rows]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        candidates = np.nonzero(has_spread(lo, hi))[0]
        if len(candidates) == 0:
            continue
        q = int(candidates[rng.integers(len(candidates))])
        p = float(rng.uniform(lo[q], hi[q]))
        if not p > lo[q]:
            p = float(np.nextafter(lo[q], hi[q]))
        mask = sub[:, q] < p
        lid = new_node(int(mask.sum()), d + 1)
        rid = new_node(int((~mask).sum()), d + 1)
        feature[nid], threshold[nid], left[nid], right[nid] = q, p, lid, rid
        stack.append((rid, rows[~mask], d + 1))
        stack.append((lid, rows[mask], d + 1))
    return IsoTree(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                   np.array(size), np.array(depth), np.asarray(sample))


@dataclass
class IsoForest:
    trees: List[IsoTree]
    psi: int
    kind: str = "iforest"
    n_features: int = 0

    @property
    def height_limit(self) -> int:
        return int(math.ceil(math.log2(self.psi))) if self.psi > 1 else 0

    def mean_path_length(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.n_features and X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return np.mean([t.path_length(X) for t in self.trees], axis=0)

    def score(self, X) -> np.ndarray:
        return score_from_path(self.mean_path_length(X), self.psi)

    def to_dict(self):
        return {"kind": "iforest", "psi": self.psi, "n_features": self.n_features,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        return cls([IsoTree.from_dict(t) for t in d["trees"]], int(d["psi"]),
                   n_features=int(d.get("n_features", 0)))


def iforest_fit(X, n_trees: int = N_TREES, psi: int = DEFAULT_PSI, seed: int = 0) -> IsoForest:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = len(X)
    if n < 2:
        raise ValueError("need at least 2 training vectors")
    if psi > n:
        if psi != DEFAULT_PSI:
            warnings.warn(f"subsample size {psi} exceeds training size {n}; using {n}")
        psi = n
    height = int(math.ceil(math.log2(psi)))
    trees = []
    for t in range(n_trees):
        rng = rng_for(seed, "iforest-tree", t)
        sample = np.sort(rng.choice(n, size=psi, replace=False))
        trees.append(grow_tree(X, sample, height, rng))
    return IsoForest(trees, psi, n_features=X.shape[1])


def iforest_score(model: IsoForest, x) -> float:
    return float(model.score(np.asarray(x, dtype=float)[None])[0])
