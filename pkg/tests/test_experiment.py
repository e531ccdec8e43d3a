import csv
import filecmp

import numpy as np
import pytest

from timeshape.config import load_config
from timeshape.experiment import (
    Experiment, ExperimentConfig, ResultRow, ResultTable, emit_score_trace, run, shipped_config,
)
from timeshape.nids import DetectionReport, detect
from timeshape.reshaper import reshape_offline
from timeshape.trace_io import write_canonical

QUICK = shipped_config("quick")


def quick_mapping():
    return load_config(QUICK)


def quick(**changes):
    m = quick_mapping()
    for path, value in changes.items():
        node = m
        *head, last = path.split("__")
        for k in head:
            node = node.setdefault(k, {})
        node[last] = value
    return ExperimentConfig.from_mapping(m, base=QUICK.parent)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def quick_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("quick")
    exp = run(ExperimentConfig.load(QUICK), out)
    return exp, out


def test_output_layout(quick_run):
    _, out = quick_run
    for name in ("table3.csv", "table4.csv", "thresholds.csv", "e2e.csv", "mitigation.csv",
                 "models/reshaper_w3.txt", "models/reshaper_w10.txt", "models/nids_ae.json",
                 "traces/flood_reshaped_w10.txt", "scores/kitnet_scan.csv", "scores/kitnet_scan_3.csv",
                 "events/iforest_flood.jsonl"):
        assert (out / name).is_file(), name
    t3 = read_csv(out / "table3.csv")
    assert t3[0] == ["nids", "attack", "dr_before", "dr_after", "fpr_holdout", "status"]
    assert len(t3) == 1 + 3 * 2 + 1
    t4 = read_csv(out / "table4.csv")
    assert t4[0][3:5] == ["dr_after_w3", "dr_after_w10"]
    assert t4[-1][:2] == ["reshaper", "final_train_loss"]
    assert read_csv(out / "e2e.csv")[0] == ["nids", "attack", "dr", "fpr_responses", "responses", "status"]
    sc = read_csv(out / "scores/ae_flood.csv")
    assert sc[0] == ["seq_index", "score_before", "score_after", "threshold", "label"]
    assert len(sc) == 301


def test_average_row_is_mean_of_rows(quick_run):
    _, out = quick_run
    t3 = read_csv(out / "table3.csv")
    body, avg = t3[1:-1], t3[-1]
    assert avg[:2] == ["average", "all"]
    for col in (2, 3, 4):
        assert float(avg[col]) == pytest.approx(np.mean([float(r[col]) for r in body]), abs=0.006)


def test_averages_recomputed_after_edit():
    t = ResultTable([5], [ResultRow("ae", "a", 100.0, {5: 0.0}), ResultRow("ae", "b", 50.0, {5: None})])
    assert t.averages().before == 75.0 and t.averages().after[5] == 0.0
    t.row("ae", "b").after[5] = 10.0
    assert t.averages().after[5] == 5.0


def test_reshaping_hides_floods_not_scans(quick_run):
    exp, _ = quick_run
    t = exp.baseline()
    for kind in ("ae", "kitnet"):
        assert t.row(kind, "flood").before > 90 and t.row(kind, "flood").after[10] < 5
        assert t.row(kind, "scan").after[10] > 90


def test_single_window_sweep_equals_baseline():
    cfg = quick(reshaper__windows=[10], nids__kinds=["ae"])
    exp = Experiment(cfg)
    a, b = exp.baseline(), exp.sweep()
    assert [(r.nids, r.attack, r.before, r.after, r.fpr) for r in a.rows] == \
           [(r.nids, r.attack, r.before, r.after, r.fpr) for r in b.rows]


def test_failing_cells_are_isolated(tmp_path):
    m = quick_mapping()
    m["reshaper"]["windows"] = [10, 400]  # attacks hold 300 packets, too short for W=400
    m["nids"]["kitnet"] = {"bogus": 1}
    m["nids"]["kinds"] = ["ae", "kitnet"]
    m["mitigation"]["attacks"] = []
    m.pop("e2e")
    cfg = ExperimentConfig.from_mapping(m)
    run(cfg, tmp_path)
    rows = {(r[0], r[1]): r for r in read_csv(tmp_path / "table4.csv")}
    assert rows[("kitnet", "flood")][-1].startswith("failed: TypeError")
    ae = rows[("ae", "flood")]
    assert ae[3] == "0.00" and ae[4] == "undefined" and ae[-1].startswith("W=400 failed")
    th = read_csv(tmp_path / "thresholds.csv")
    assert th[2][0] == "kitnet" and th[2][-1].startswith("failed")


def test_reshaping_benign_traffic_keeps_it_benign():
    exp = Experiment(quick(nids__kinds=["ae"]))
    exp.prepare()
    model, th = exp.detector("ae")
    orig = detect(model, th, exp.X_hold, exp.holdout.labels()).fpr
    again = reshape_offline(exp.reshaper(10), exp.holdout)
    moved = detect(model, th, exp.context.features(again), again.labels()).fpr
    assert abs(moved - orig) <= 5.0


def test_runs_are_byte_identical(quick_run, tmp_path):
    _, first = quick_run
    run(ExperimentConfig.load(QUICK), tmp_path)
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
    _, mismatch, errors = filecmp.cmpfiles(first, tmp_path, [str(f) for f in files], shallow=False)
    assert mismatch == [] and errors == []


def test_benign_from_trace_file(tmp_path, small_benign):
    p = tmp_path / "benign.txt"
    write_canonical(small_benign, p)
    m = quick_mapping()
    m["benign"] = {"path": "benign.txt"}
    m["split"] = {"warmup": 0, "nids_train": 100, "reshaper_train": 100, "calibration": 100, "holdout": 100}
    cfg = ExperimentConfig.from_mapping(m, base=tmp_path)
    exp = Experiment(cfg)
    exp.prepare()
    assert len(exp.X_train) == 100 and len(exp.holdout) == 100
    assert exp.holdout[0].timestamp == 0.0


@pytest.mark.parametrize("change,msg", [
    ({"reshaper__baseline_window": 7}, "baseline_window"),
    ({"split__holdout": 0}, "at least one packet"),
    ({"e2e__attacks": ["nope"]}, "unknown attack"),
    ({"nids__threshold": "mean"}, "threshold method"),
])
def test_config_validation(change, msg):
    with pytest.raises(ValueError, match=msg):
        quick(**change)


def test_config_sources_validated(tmp_path):
    m = quick_mapping()
    m["attacks"] = [m["attacks"][0], dict(m["attacks"][0])]
    with pytest.raises(ValueError, match="unique"):
        ExperimentConfig.from_mapping(m)
    m = quick_mapping()
    m["benign"] = {"path": "missing.pcap"}
    with pytest.raises(FileNotFoundError):
        ExperimentConfig.from_mapping(m, base=tmp_path)
    m = quick_mapping()
    m["benign"]["n_packets"] = 100
    with pytest.raises(ValueError, match="split needs"):
        Experiment(ExperimentConfig.from_mapping(m)).prepare()


def test_score_trace_needs_matching_packets(tmp_path):
    a = DetectionReport([0, 1], [0.1, 0.2], ["malicious"] * 2, 0.5)
    b = DetectionReport([0, 2], [0.1, 0.2], ["malicious"] * 2, 0.5)
    with pytest.raises(ValueError):
        emit_score_trace(a, b, tmp_path / "s.csv")
