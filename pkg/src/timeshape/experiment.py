"""Declarative experiments: baseline, window-size sweep, end-to-end and mitigation.

A config (TOML) names one benign source, the malicious sources, how to cut the
benign stream, and the settings of each stage.  ``run`` executes everything
and writes, under the output directory::

    table3.csv                  DR before/after per (nids, attack) at the baseline W
    table4.csv                  DR after per W, plus each W's final training loss
    e2e.csv                     end-to-end DR per (nids, attack)
    mitigation.csv              leave-one-attack-out DR/FPR per classifier
    thresholds.csv              calibrated threshold per detector
    scores/<nids>_<attack>.csv  per-packet scores before/after at the baseline W
    scores/<nids>_<attack>_<W>.csv
    events/<nids>_<attack>.jsonl
    models/                     reshapers, detectors
    traces/                     reshaped traces in canonical form

The benign stream is cut, in order, into warm-up, NIDS-training,
reshaper-training, calibration and holdout runs of the configured sizes.  The
warm-up only primes the feature extractor.  NIDS-training features continue from
it, and every evaluated trace is scored as a continuation of warm-up plus
NIDS-training (see ``pipeline.FeatureContext``).

Each (nids, attack, W) cell runs in isolation: a failing cell records its
reason in the ``status`` column and the others proceed.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import load_config
from .features import DEFAULT_LAMBDAS
from .mitigation import CvPlan, run_cv, write_cv_table
from .netsim import NetworkModel, run_e2e
from .nids import calibrate_threshold, detect, parse_method, save_nids, train_nids
from .nids.detect import format_rate
from .pipeline import FeatureContext
from .reshaper import fit_reshaper, reshape_offline, save_model
from .seeds import derive_seed
from .synthetic import TrafficProfile, generate
from .trace_io import TrafficTrace, read_trace, rebase, write_canonical

log = logging.getLogger(__name__)

SEGMENTS = ("warmup", "nids_train", "reshaper_train", "calibration", "holdout")


# -- config ----------------------------------------------------------------------

def _source(spec: dict, base: Path, label: str) -> dict:
    spec = dict(spec)
    if "path" in spec:
        p = Path(spec["path"])
        if not p.is_absolute():
            p = base / p
        if not p.exists():
            raise FileNotFoundError(f"trace source {p} does not exist")
        spec["path"] = str(p)
    else:
        TrafficProfile.from_mapping({k: v for k, v in spec.items() if k != "name"})
    return spec


def _load_source(spec: dict, label: str) -> TrafficTrace:
    if "path" in spec:
        return read_trace(spec["path"], label=label)
    return generate(TrafficProfile.from_mapping({k: v for k, v in spec.items() if k != "name"}))


@dataclass
class ExperimentConfig:
    seed: int
    benign: dict
    attacks: List[dict]
    segments: Dict[str, int]
    lambdas: List[float] = field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    windows: List[int] = field(default_factory=lambda: [3, 50, 150])
    baseline_window: int = 50
    reshaper_epochs: int = 1
    nids_kinds: List[str] = field(default_factory=lambda: ["ae", "kitnet", "iforest"])
    nids_options: Dict[str, dict] = field(default_factory=dict)
    threshold_method: str = "pctl:99.5"
    phi: float = 1.0
    network: Optional[dict] = None
    e2e_attacks: List[str] = field(default_factory=list)
    mitigation_kinds: List[str] = field(default_factory=lambda: ["lr", "gnb", "rf"])
    mitigation_attacks: List[str] = field(default_factory=list)
    mitigation_packets: int = 0  # per attack; 0 keeps all

    def __post_init__(self):
        if not self.windows:
            raise ValueError("window list must not be empty")
        if self.baseline_window not in self.windows:
            raise ValueError("baseline_window must be one of the sweep windows")
        missing = [s for s in SEGMENTS if s not in self.segments]
        if missing:
            raise ValueError(f"split is missing segment sizes: {missing}")
        if any(self.segments[s] < 1 for s in SEGMENTS if s != "warmup"):
            raise ValueError("every split segment except warmup needs at least one packet")
        names = [a["name"] for a in self.attacks]
        if len(set(names)) != len(names):
            raise ValueError("attack names must be unique")
        for n in list(self.e2e_attacks) + list(self.mitigation_attacks):
            if n not in names:
                raise ValueError(f"unknown attack {n!r}")
        parse_method(self.threshold_method)

    @property
    def attack_names(self) -> List[str]:
        return [a["name"] for a in self.attacks]

    @classmethod
    def from_mapping(cls, m: dict, base: Path = Path(".")) -> "ExperimentConfig":
        m = dict(m)
        split = dict(m.get("split", {}))
        reshaper = dict(m.get("reshaper", {}))
        nids = dict(m.get("nids", {}))
        mit = dict(m.get("mitigation", {}))
        e2e = dict(m.get("e2e", {}))
        attacks = []
        for a in m.get("attacks", []):
            if "name" not in a:
                raise ValueError("every attack needs a name")
            attacks.append(_source(a, base, "malicious"))
        if not attacks:
            raise ValueError("at least one attack is required")
        kinds = list(nids.pop("kinds", ["ae", "kitnet", "iforest"]))
        return cls(
            seed=int(m.get("seed", 0)),
            benign=_source(m["benign"], base, "benign"),
            attacks=attacks,
            segments={s: int(split.get(s, 0)) for s in SEGMENTS},
            lambdas=[float(x) for x in m.get("lambdas", DEFAULT_LAMBDAS)],
            windows=[int(w) for w in reshaper.get("windows", [3, 50, 150])],
            baseline_window=int(reshaper.get("baseline_window", 50)),
            reshaper_epochs=int(reshaper.get("epochs", 1)),
            nids_kinds=kinds,
            nids_options={k: dict(nids.get(k, {})) for k in kinds},
            threshold_method=str(nids.get("threshold", "pctl:99.5")),
            phi=float(nids.get("phi", 1.0)),
            network=m.get("network"),
            e2e_attacks=list(e2e.get("attacks", [])),
            mitigation_kinds=list(mit.get("kinds", ["lr", "gnb", "rf"])),
            mitigation_attacks=list(mit.get("attacks", [])),
            mitigation_packets=int(mit.get("packets", 0)),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_mapping(load_config(path), base=path.parent)


# -- result tables ---------------------------------------------------------------

@dataclass
class ResultRow:
    nids: str
    attack: str
    before: Optional[float]
    after: Dict[int, Optional[float]]
    fpr: Optional[float] = None
    status: str = "ok"


@dataclass
class ResultTable:
    windows: List[int]
    rows: List[ResultRow]
    losses: Dict[int, float] = field(default_factory=dict)

    def row(self, nids: str, attack: str) -> ResultRow:
        for r in self.rows:
            if r.nids == nids and r.attack == attack:
                return r
        raise KeyError((nids, attack))

    def averages(self) -> ResultRow:
        """Column means over the rows that hold a value; recomputed on every call."""
        def mean(vals):
            vals = [v for v in vals if v is not None]
            return float(np.mean(vals)) if vals else None

        return ResultRow(
            "average", "all",
            mean([r.before for r in self.rows]),
            {w: mean([r.after.get(w) for r in self.rows]) for w in self.windows},
            mean([r.fpr for r in self.rows]),
        )

    def write_csv(self, path) -> None:
        single = len(self.windows) == 1
        after_cols = ["dr_after"] if single else [f"dr_after_w{w}" for w in self.windows]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["nids", "attack", "dr_before", *after_cols, "fpr_holdout", "status"])
            for r in self.rows + [self.averages()]:
                w.writerow([r.nids, r.attack, format_rate(r.before),
                            *[format_rate(r.after.get(x)) for x in self.windows],
                            format_rate(r.fpr), r.status])
            if self.losses and not single:
                w.writerow(["reshaper", "final_train_loss", "",
                            *[f"{self.losses[x]:.6g}" if x in self.losses else "" for x in self.windows], "", ""])


# -- the run ---------------------------------------------------------------------

class StageFailed(RuntimeError):
    """A model that failed earlier in the run; the message is the recorded reason."""


def _reason(exc: BaseException) -> str:
    if isinstance(exc, StageFailed):
        return str(exc)
    return f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")


class Experiment:
    """Shared state for one config; stages are computed lazily and cached."""

    def __init__(self, config: ExperimentConfig, out: Optional[Path] = None):
        self.cfg = config
        self.out = Path(out) if out is not None else None
        self._prepared = False
        self.reshapers: Dict[int, object] = {}
        self.reshaper_errors: Dict[int, str] = {}
        self.losses: Dict[int, float] = {}
        self.nids: Dict[str, object] = {}
        self.thresholds: Dict[str, object] = {}
        self.nids_errors: Dict[str, str] = {}
        self._reshaped: Dict[tuple, object] = {}
        self._attack_features: Dict[str, np.ndarray] = {}

    def _path(self, *parts) -> Optional[Path]:
        if self.out is None:
            return None
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    # data and features
    def prepare(self) -> None:
        if self._prepared:
            return
        cfg = self.cfg
        benign = _load_source(cfg.benign, "benign")
        if any(lab != "benign" for lab in benign.labels()):
            raise ValueError("benign source contains non-benign records")
        need = sum(cfg.segments.values())
        if len(benign) < need:
            raise ValueError(f"benign source has {len(benign)} packets, split needs {need}")
        cuts, k = {}, 0
        for s in SEGMENTS:
            cuts[s] = benign.records[k : k + cfg.segments[s]]
            k += cfg.segments[s]
        self.context = FeatureContext(TrafficTrace(cuts["warmup"] + cuts["nids_train"]), cfg.lambdas)
        n_warm = len(cuts["warmup"])
        self.X_train = self.context.context_features[n_warm:]
        self.reshaper_train = rebase(cuts["reshaper_train"], benign.origin, "reshaper_train_benign", "reshaper_train")
        self.calibration = rebase(cuts["calibration"], benign.origin, "mixed", "calibration")
        self.holdout = rebase(cuts["holdout"], benign.origin, "mixed", "holdout")
        self.X_cal = self.context.features(self.calibration)
        self.X_hold = self.context.features(self.holdout)
        self.attacks = {}
        for a in cfg.attacks:
            tr = _load_source(a, "malicious")
            self.attacks[a["name"]] = TrafficTrace(tr.records, tr.origin, "malicious_test", a["name"])
        self._prepared = True

    def attack_features(self, name: str) -> np.ndarray:
        if name not in self._attack_features:
            self._attack_features[name] = self.context.features(self.attacks[name])
        return self._attack_features[name]

    # models
    def reshaper(self, W: int):
        if W in self.reshaper_errors:
            raise StageFailed(self.reshaper_errors[W])
        if W not in self.reshapers:
            self.prepare()
            try:
                model, losses = fit_reshaper(self.reshaper_train, W, self.cfg.reshaper_epochs,
                                             seed=derive_seed(self.cfg.seed, "reshaper", W) % (2**32))
            except Exception as exc:  # recorded per cell
                self.reshaper_errors[W] = _reason(exc)
                raise
            self.reshapers[W] = model
            self.losses[W] = losses[-1] if losses else math.nan
            p = self._path("models", f"reshaper_w{W}.txt")
            if p is not None:
                save_model(model, p)
            log.info("reshaper W=%d trained, final loss %.6g", W, self.losses[W])
        return self.reshapers[W]

    def detector(self, kind: str):
        if kind in self.nids_errors:
            raise StageFailed(self.nids_errors[kind])
        if kind not in self.nids:
            self.prepare()
            try:
                model = train_nids(kind, self.X_train, seed=derive_seed(self.cfg.seed, f"nids-{kind}") % (2**32),
                                   **self.cfg.nids_options.get(kind, {}))
                method, pct = parse_method(self.cfg.threshold_method)
                th = calibrate_threshold(model.score(self.X_cal), method, pct, self.cfg.phi)
            except Exception as exc:
                self.nids_errors[kind] = _reason(exc)
                raise
            self.nids[kind], self.thresholds[kind] = model, th
            p = self._path("models", f"nids_{kind}.json")
            if p is not None:
                save_nids(model, p)
            log.info("%s trained, threshold %s", kind, th.describe())
        return self.nids[kind], self.thresholds[kind]

    def reshaped(self, name: str, W: int):
        key = (name, W)
        if key not in self._reshaped:
            tr = reshape_offline(self.reshaper(W), self.attacks[name])
            X = self.context.features(tr)
            self._reshaped[key] = (tr, X)
            p = self._path("traces", f"{name}_reshaped_w{W}.txt")
            if p is not None:
                write_canonical(tr, p)
        return self._reshaped[key]

    def holdout_fpr(self, kind: str) -> float:
        model, th = self.detector(kind)
        return detect(model, th, self.X_hold, ["benign"] * len(self.X_hold)).fpr

    # tables
    def _table(self, windows: Sequence[int], score_suffix: bool) -> ResultTable:
        self.prepare()
        rows = []
        for kind in self.cfg.nids_kinds:
            for name in self.cfg.attack_names:
                row = ResultRow(kind, name, None, {w: None for w in windows})
                rows.append(row)
                try:
                    model, th = self.detector(kind)
                    row.fpr = self.holdout_fpr(kind)
                    tr = self.attacks[name]
                    before = detect(model, th, self.attack_features(name), tr.labels(),
                                    [r.seq_index for r in tr.records])
                    row.before = before.dr
                except Exception as exc:
                    row.status = _reason(exc)
                    continue
                failures = []
                for w in windows:
                    try:
                        rtr, X = self.reshaped(name, w)
                        after = detect(model, th, X, rtr.labels(), [r.seq_index for r in rtr.records])
                        row.after[w] = after.dr
                        suffix = f"_{w}" if score_suffix else ""
                        p = self._path("scores", f"{kind}_{name}{suffix}.csv")
                        if p is not None:
                            emit_score_trace(before, after, p)
                    except Exception as exc:
                        failures.append(f"W={w} {_reason(exc)}")
                if failures:
                    row.status = "; ".join(failures)
        return ResultTable(list(windows), rows, {w: self.losses[w] for w in windows if w in self.losses})

    def baseline(self) -> ResultTable:
        return self._table([self.cfg.baseline_window], score_suffix=False)

    def sweep(self) -> ResultTable:
        return self._table(self.cfg.windows, score_suffix=True)

    def e2e(self) -> List[dict]:
        self.prepare()
        if self.cfg.network is None:
            return []
        net = NetworkModel.from_mapping(self.cfg.network)
        out = []
        for kind in self.cfg.nids_kinds:
            for name in self.cfg.e2e_attacks:
                row = {"nids": kind, "attack": name, "dr": None, "fpr_responses": None,
                       "responses": 0, "status": "ok"}
                try:
                    model, th = self.detector(kind)
                    res = run_e2e(self.reshaper(self.cfg.baseline_window), self.attacks[name], net, model, th,
                                  self.context)
                    row["dr"] = res.report.dr
                    row["fpr_responses"] = res.report.fpr
                    row["responses"] = sum(1 for lab in res.report.labels if lab == "benign")
                    p = self._path("events", f"{kind}_{name}.jsonl")
                    if p is not None:
                        res.write_events(p)
                except Exception as exc:
                    row["status"] = _reason(exc)
                out.append(row)
        return out

    def mitigation_plan(self) -> CvPlan:
        self.prepare()
        attacks = {}
        for name in self.cfg.mitigation_attacks:
            _, X = self.reshaped(name, self.cfg.baseline_window)
            if self.cfg.mitigation_packets:
                X = X[: self.cfg.mitigation_packets]
            attacks[name] = X
        return CvPlan(self.X_train, self.X_hold, attacks, seed=derive_seed(self.cfg.seed, "mitigation") % (2**32))

    def mitigation(self):
        if len(self.cfg.mitigation_attacks) < 2:
            return []
        plan = self.mitigation_plan()
        return [run_cv(plan, kind) for kind in self.cfg.mitigation_kinds]


def emit_score_trace(before, after, path) -> None:
    """Per-packet scores before and after reshaping, aligned by seq_index, with the threshold."""
    if list(before.seq_index) != list(after.seq_index):
        raise ValueError("before/after reports cover different packets")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seq_index", "score_before", "score_after", "threshold", "label"])
        for i, sb, sa, lab in zip(before.seq_index, before.scores, after.scores, before.labels):
            w.writerow([i, repr(float(sb)), repr(float(sa)), repr(float(before.threshold)), lab])


def _write_rows(path, rows: List[dict], columns: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_rate(r[c]) if c in ("dr", "fpr_responses") else r[c] for c in columns])


def run_baseline(config: ExperimentConfig, out=None) -> ResultTable:
    return Experiment(config, out).baseline()


def run_ws_sweep(config: ExperimentConfig, out=None) -> ResultTable:
    if len(config.windows) < 1:
        raise ValueError("the sweep needs at least one window size")
    return Experiment(config, out).sweep()


def run(config: ExperimentConfig, out) -> Experiment:
    """Every stage, all outputs written under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    exp = Experiment(config, out)
    exp.prepare()
    exp.baseline().write_csv(out / "table3.csv")
    exp.sweep().write_csv(out / "table4.csv")
    with open(out / "thresholds.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nids", "method", "phi", "threshold", "status"])
        for kind in config.nids_kinds:
            if kind in exp.thresholds:
                th = exp.thresholds[kind]
                w.writerow([kind, config.threshold_method, repr(th.phi), repr(th.value), "ok"])
            else:
                w.writerow([kind, config.threshold_method, repr(config.phi), "", exp.nids_errors.get(kind, "")])
    _write_rows(out / "e2e.csv", exp.e2e(), ["nids", "attack", "dr", "fpr_responses", "responses", "status"])
    reports = exp.mitigation()
    if reports:
        write_cv_table(reports, out / "mitigation.csv")
    return exp


def shipped_config(name: str = "acceptance") -> Path:
    """Path of a config shipped with the package (``acceptance`` or ``quick``)."""
    return Path(__file__).parent / "fixtures" / f"{name}.toml"
