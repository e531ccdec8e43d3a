"""Anomaly detectors trained on benign features: AE, KitNET ensemble, isolation forest."""

from __future__ import annotations

import json

from .ae import AeModel, ae_score, ae_train
from .common import MinMaxScaler, rmse, rmse_rows
from .detect import DetectionReport, Threshold, calibrate_threshold, detect, nearest_rank, parse_method
from .iforest import IsoForest, c_factor, iforest_fit, iforest_score, score_from_path
from .kitnet import KitnetModel, TiedAE, kitnet_build_map, kitnet_score, kitnet_train

NIDS_KINDS = ("ae", "kitnet", "iforest")

_LOADERS = {"ae": AeModel, "kitnet": KitnetModel, "iforest": IsoForest}


def train_nids(kind: str, X, seed: int = 0, **options):
    """Train one detector on benign features.  ``options`` go to the kind's trainer."""
    if kind == "ae":
        return ae_train(X, seed=seed, **options)
    if kind == "kitnet":
        return kitnet_train(X, seed=seed, **options)
    if kind == "iforest":
        return iforest_fit(X, seed=seed, **options)
    raise ValueError(f"unknown NIDS kind {kind!r}")


def save_nids(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh)


def load_nids(path):
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    return _LOADERS[d["kind"]].from_dict(d)


__all__ = [
    "AeModel", "DetectionReport", "IsoForest", "KitnetModel", "MinMaxScaler", "NIDS_KINDS",
    "Threshold", "TiedAE", "ae_score", "ae_train", "c_factor", "calibrate_threshold", "detect",
    "iforest_fit", "iforest_score", "kitnet_build_map", "kitnet_score", "kitnet_train",
    "load_nids", "nearest_rank", "parse_method", "rmse", "rmse_rows", "save_nids",
    "score_from_path", "train_nids",
]
