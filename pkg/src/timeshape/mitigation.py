"""Supervised detectors trained on benign plus reshaped-attack features.

Three classifiers are offered: logistic regression (``lr``), Gaussian naive
Bayes (``gnb``) and a random forest (``rf``).  They are evaluated
leave-one-attack-out.  Each fold trains on benign vectors plus every attack
but one, with the classes balanced by down-sampling the larger one, and
measures DR on the held-out attack and FPR on a benign slice that no fold
trains on.

Two degenerate kinds, ``always_benign`` and ``always_malicious``, serve as
protocol sanity checks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .seeds import derive_seed, rng_for

KINDS = ("lr", "gnb", "rf")
DEGENERATE_KINDS = ("always_benign", "always_malicious")
KIND_NAMES = {
    "lr": "logistic_regression",
    "gnb": "gaussian_nb",
    "rf": "random_forest",
    "always_benign": "always_benign",
    "always_malicious": "always_malicious",
}

LR_MAX_ITER = 100
LR_GRAD_TOL = 1e-4
GNB_VAR_SMOOTHING = 1e-9
RF_TREES = 100


def _as_binary(y) -> np.ndarray:
    """Labels as 0 (benign) / 1 (malicious); accepts strings or numbers."""
    y = list(y) if not isinstance(y, np.ndarray) else y
    if len(y) and isinstance(y[0], str):
        bad = {v for v in y if v not in ("benign", "malicious")}
        if bad:
            raise ValueError(f"labels must be benign/malicious, got {sorted(bad)}")
        return np.array([v == "malicious" for v in y], dtype=int)
    y = np.asarray(y).astype(int)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("numeric labels must be 0 or 1")
    return y


@dataclass
class SupervisedNids:
    kind: str
    n_features: int
    params: dict = field(default_factory=dict)
    converged: Optional[bool] = None
    n_iter: int = 0

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected vectors of width {self.n_features}, got shape {X.shape}")
        return X

    def score(self, X) -> np.ndarray:
        """Probability-like malicious score in [0, 1] per vector."""
        X = self._check(X)
        k = self.kind
        if k == "always_benign":
            return np.zeros(len(X))
        if k == "always_malicious":
            return np.ones(len(X))
        if k == "lr":
            return expit(X @ self.params["w"] + self.params["b"])
        if k == "gnb":
            return _gnb_posterior(self.params, X)
        if k == "rf":
            forest = self.params["forest"]
            proba = forest.predict_proba(X)
            cls = list(forest.classes_)
            return proba[:, cls.index(1)] if 1 in cls else np.zeros(len(X))
        raise ValueError(f"unknown classifier kind {k!r}")

    def predict(self, X) -> np.ndarray:
        """1 for malicious, 0 for benign."""
        return (self.score(X) > 0.5).astype(int)


def _lr_loss_grad(X, y, w, b):
    z = X @ w + b
    # mean logistic loss, written stably as log(1 + e^z) - y z
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    r = expit(z) - y
    return loss, X.T @ r / len(y), float(r.mean())


def _fit_lr(X, y, max_iter=LR_MAX_ITER, tol=LR_GRAD_TOL):
    """Batch gradient descent with a backtracking (Armijo) step."""
    w = np.zeros(X.shape[1])
    b = 0.0
    loss, gw, gb = _lr_loss_grad(X, y, w, b)
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm2 = float(gw @ gw) + gb * gb
        if math.sqrt(gnorm2) < tol:
            converged = True
            it -= 1
            break
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            new_loss, ngw, ngb = _lr_loss_grad(X, y, w_new, b_new)
            if new_loss <= loss - 0.5 * step * gnorm2 or step < 1e-20:
                break
            step *= 0.5
        w, b, loss, gw, gb = w_new, b_new, new_loss, ngw, ngb
        step *= 2.0
    else:
        converged = math.sqrt(float(gw @ gw) + gb * gb) < tol
    return {"w": w, "b": b}, converged, it


def _fit_gnb(X, y, smoothing=GNB_VAR_SMOOTHING):
    max_var = float(X.var(axis=0).max())
    eps = smoothing * (max_var if max_var > 0 else 1.0)
    theta, var, prior = [], [], []
    for c in (0, 1):
        Xc = X[y == c]
        theta.append(Xc.mean(axis=0))
        var.append(Xc.var(axis=0) + eps)
        prior.append(len(Xc) / len(X))
    return {"theta": np.array(theta), "var": np.array(var), "log_prior": np.log(prior)}


def _gnb_posterior(p, X):
    joint = []
    for c in (0, 1):
        v = p["var"][c]
        ll = -0.5 * np.sum(np.log(2.0 * np.pi * v)) - 0.5 * np.sum((X - p["theta"][c]) ** 2 / v, axis=1)
        joint.append(ll + p["log_prior"][c])
    joint = np.stack(joint, axis=1)
    return np.exp(joint[:, 1] - logsumexp(joint, axis=1))


def fit(kind: str, X, y, seed: int = 0) -> SupervisedNids:
    """Train one supervised detector on labeled vectors (both classes required)."""
    X = np.asarray(X, dtype=float)
    y = _as_binary(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one label per row")
    if kind in DEGENERATE_KINDS:
        return SupervisedNids(kind, X.shape[1])
    if len(np.unique(y)) < 2:
        raise ValueError("training data must contain both benign and malicious vectors")
    if kind == "lr":
        params, converged, n_iter = _fit_lr(X, y)
        return SupervisedNids(kind, X.shape[1], params, converged, n_iter)
    if kind == "gnb":
        return SupervisedNids(kind, X.shape[1], _fit_gnb(X, y))
    if kind == "rf":
        from sklearn.ensemble import RandomForestClassifier

        forest = RandomForestClassifier(
            n_estimators=RF_TREES, criterion="gini", max_depth=None, min_samples_split=2,
            bootstrap=True, random_state=derive_seed(seed, "rf") % (2**32), n_jobs=1,
        )
        forest.fit(X, y)
        return SupervisedNids(kind, X.shape[1], {"forest": forest})
    raise ValueError(f"unknown classifier kind {kind!r}")


def predict(model: SupervisedNids, X):
    """Returns (labels as strings, scores)."""
    s = model.score(X)
    return ["malicious" if v > 0.5 else "benign" for v in s], s


# -- leave-one-attack-out ----------------------------------------------------------

@dataclass
class CvPlan:
    """Benign training and held-out vectors plus named reshaped-attack vectors."""

    benign_train: np.ndarray
    benign_test: np.ndarray
    attacks: Dict[str, np.ndarray]
    seed: int = 0

    def __post_init__(self):
        if len(self.attacks) < 2:
            raise ValueError("leave-one-attack-out needs at least 2 attacks")
        self.benign_train = np.asarray(self.benign_train, dtype=float)
        self.benign_test = np.asarray(self.benign_test, dtype=float)
        self.attacks = {k: np.asarray(v, dtype=float) for k, v in self.attacks.items()}
        widths = {self.benign_train.shape[1], self.benign_test.shape[1]}
        widths |= {v.shape[1] for v in self.attacks.values()}
        if len(widths) != 1:
            raise ValueError("all feature sets must have the same width")
        if len(self.benign_train) == 0:
            raise ValueError("empty benign training set")

    @property
    def names(self) -> List[str]:
        return list(self.attacks)

    def fold(self, held_out: str):
        """(X_train, y_train, X_attack_test) for one fold, classes balanced."""
        if held_out not in self.attacks:
            raise KeyError(held_out)
        test = self.attacks[held_out]
        if len(test) == 0:
            raise ValueError(f"fold {held_out!r} has an empty test set")
        mal = np.concatenate([v for k, v in self.attacks.items() if k != held_out])
        ben = self.benign_train
        rng = rng_for(self.seed, "cv-balance", self.names.index(held_out))
        n = min(len(ben), len(mal))
        if len(ben) > n:
            ben = ben[np.sort(rng.choice(len(ben), n, replace=False))]
        if len(mal) > n:
            mal = mal[np.sort(rng.choice(len(mal), n, replace=False))]
        X = np.concatenate([ben, mal])
        y = np.concatenate([np.zeros(len(ben), dtype=int), np.ones(len(mal), dtype=int)])
        return X, y, test


@dataclass
class FoldResult:
    kind: str
    attack: str
    dr: float
    fpr: float
    n_train: int


@dataclass
class CvReport:
    kind: str
    folds: List[FoldResult]

    @property
    def mean_dr(self) -> float:
        return float(np.mean([f.dr for f in self.folds]))

    @property
    def mean_fpr(self) -> float:
        return float(np.mean([f.fpr for f in self.folds]))


def run_cv(plan: CvPlan, kind: str) -> CvReport:
    folds = []
    for i, name in enumerate(plan.names):
        X, y, test = plan.fold(name)
        model = fit(kind, X, y, seed=derive_seed(plan.seed, f"cv-{kind}", i))
        dr = 100.0 * float(model.predict(test).mean())
        fpr = 100.0 * float(model.predict(plan.benign_test).mean()) if len(plan.benign_test) else float("nan")
        folds.append(FoldResult(kind, name, dr, fpr, len(y)))
    return CvReport(kind, folds)


def write_cv_table(reports: Sequence[CvReport], path) -> None:
    """Per kind: one DR/FPR row per held-out attack and an average row; then the overall average."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["classifier", "held_out_attack", "dr", "fpr"])
        for rep in reports:
            for f in rep.folds:
                w.writerow([KIND_NAMES[rep.kind], f.attack, f"{f.dr:.2f}", f"{f.fpr:.2f}"])
            w.writerow([KIND_NAMES[rep.kind], "average", f"{rep.mean_dr:.2f}", f"{rep.mean_fpr:.2f}"])
        if reports:
            dr = np.mean([r.mean_dr for r in reports])
            fpr = np.mean([r.mean_fpr for r in reports])
            w.writerow(["all", "average", f"{dr:.2f}", f"{fpr:.2f}"])
