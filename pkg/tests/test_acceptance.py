"""Acceptance criteria 1-11, one PASS/FAIL line each.

Each test records its verdict line; the lines are printed together in an
"acceptance criteria" section at the end of the pytest run.
"""

import csv
import filecmp
import math
import time

import numpy as np
import pytest

from timeshape.experiment import ExperimentConfig, run, shipped_config
from timeshape.features import featurize
from timeshape.mitigation import run_cv, fit
from timeshape.netsim import NetworkModel, run_e2e
from timeshape.nids import iforest_fit, rmse, score_from_path, c_factor
from timeshape.nids.ae import layer_sizes, mse_and_grads
from timeshape.reshaper import load_model, reshape_offline, reshape_step, seed_history
from timeshape.seeds import rng_for
from timeshape.trace_io import read_canonical

from conftest import random_records
from test_reshaper import fd_check, lstm_gradient_fixture

VERDICTS = []


def verdict(n, ok, detail, seconds=None, limit=None):
    if limit is not None and seconds is not None and seconds >= limit:
        ok = False
        detail += f"; over the {limit:g} s limit"
    timing = f" [{seconds:.1f} s]" if seconds is not None else ""
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}{timing}"
    VERDICTS.append(line)
    assert ok, line



# -- 1: rmse against scalar evaluation ------------------------------------------------

def test_c01_rmse_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        F = int(rng.integers(1, 33))
        x, y = rng.normal(size=F), rng.normal(size=F)
        s = 0.0
        for a, b in zip(x.tolist(), y.tolist()):
            s += (a - b) * (a - b)
        worst = max(worst, abs(rmse(x, y) - math.sqrt(s / F)))
    verdict(1, worst <= 1e-12, f"rmse vs scalar loop, 100 pairs, max |diff| {worst:.1e}",
            time.perf_counter() - t0, 1)


# -- 2: isolation forest against brute-force regrowth -----------------------------------

def scalar_c(m):
    if m > 2:
        return 2.0 * sum(1.0 / k for k in range(1, m)) - 2.0 * (m - 1) / m
    return 1.0 if m == 2 else 0.0


def brute_force_paths(xs, psi, n_trees, seed, queries):
    """Regrow each 1-D tree recursively from its documented random stream and walk every query."""
    limit = math.ceil(math.log2(psi))
    total = [0.0] * len(queries)
    for t in range(n_trees):
        rng = rng_for(seed, "iforest-tree", t)
        sample = sorted(rng.choice(len(xs), size=psi, replace=False).tolist())

        def grow(rows, depth):
            vals = [xs[i] for i in rows]
            lo, hi = min(vals), max(vals)
            if depth >= limit or len(rows) <= 1 or not hi - lo > 1e-9 * max(abs(lo), abs(hi)):
                return ("leaf", len(rows), depth)
            rng.integers(1)  # the feature draw; one candidate in 1-D
            p = float(rng.uniform(lo, hi))
            if not p > lo:
                p = float(np.nextafter(lo, hi))
            left = grow([i for i in rows if xs[i] < p], depth + 1)
            right = grow([i for i in rows if xs[i] >= p], depth + 1)
            return ("split", p, left, right)

        tree = grow(sample, 0)
        for k, q in enumerate(queries):
            node = tree
            while node[0] == "split":
                node = node[2] if q < node[1] else node[3]
            total[k] += node[2] + scalar_c(node[1])
    c_psi = scalar_c(psi)
    return [2.0 ** (-(s / n_trees) / c_psi) for s in total]


def test_c02_iforest_oracle():
    t0 = time.perf_counter()
    xs = [0.0, 0.4, 1.1, 1.3, 2.0, 2.2, 5.0, 9.5]
    queries = xs + [-3.0, 0.7, 3.3, 7.0, 20.0]
    model = iforest_fit(np.array(xs)[:, None], n_trees=10, psi=8, seed=17)
    got = model.score(np.array(queries)[:, None])
    want = brute_force_paths(xs, 8, 10, 17, queries)
    worst = float(np.max(np.abs(got - np.array(want))))
    half = float(score_from_path(c_factor(8), 8))
    grid = score_from_path(np.linspace(0.0, 12.0, 200), 8)
    decreasing = bool(np.all(np.diff(grid) < 0))
    ok = worst <= 1e-12 and half == 0.5 and decreasing
    verdict(2, ok, f"brute-force paths max |diff| {worst:.1e}; s(c(psi)) = {half!r}; "
                   f"strictly decreasing: {decreasing}", time.perf_counter() - t0, 5)


# -- 3: gradients against finite differences --------------------------------------------

def test_c03_gradients():
    t0 = time.perf_counter()
    params, X, y = lstm_gradient_fixture()
    lstm = fd_check(params, X, y, h=1e-5)
    rng = np.random.default_rng(4)
    sizes = layer_sizes(6, (5, 4, 5))
    Ws = [rng.normal(scale=0.7, size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    bs = [rng.normal(scale=0.3, size=b) for b in sizes[1:]]
    Xa = rng.uniform(size=(4, 6))
    _, gW, gb = mse_and_grads(Ws, bs, Xa)
    ae = {}
    h = 1e-5
    for tag, params_, grads in (("W", Ws, gW), ("b", bs, gb)):
        for k, (p, g) in enumerate(zip(params_, grads)):
            fd = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                lp = mse_and_grads(Ws, bs, Xa)[0]
                p[idx] = old - h
                lm = mse_and_grads(Ws, bs, Xa)[0]
                p[idx] = old
                fd[idx] = (lp - lm) / (2 * h)
            ae[f"{tag}{k}"] = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), np.linalg.norm(g), 1e-12)
    worst_lstm, worst_ae = max(lstm.values()), max(ae.values())
    verdict(3, worst_lstm <= 1e-4 and worst_ae <= 1e-4,
            f"LSTM W=3 worst rel err {worst_lstm:.1e} over {len(lstm)} tensors; "
            f"AE F=6 worst {worst_ae:.1e} over {len(ae)} tensors", time.perf_counter() - t0, 30)


# -- 4: extractor against full-prefix recomputation -------------------------------------

def prefix_features(records, lambdas):
    lam = np.asarray(lambdas)
    keys = [(r.src_mac, r.src_ip, (r.src_ip, r.dst_ip), (r.src_ip, r.dst_ip, r.protocol)) for r in records]
    ts = np.array([r.timestamp for r in records])
    sz = np.array([r.size for r in records], dtype=float)
    out = np.zeros((len(records), 12 * len(lam)))
    for i in range(len(records)):
        for f in range(4):
            idx = [j for j in range(i + 1) if keys[j][f] == keys[i][f]]
            decay = 2.0 ** (-lam[:, None] * (ts[i] - ts[idx])[None, :])  # (L, prefix)
            w = decay.sum(1)
            mean = (decay * sz[idx]).sum(1) / w
            var = np.maximum((decay * sz[idx] ** 2).sum(1) / w - mean ** 2, 0.0)
            block = np.column_stack([w, mean, np.sqrt(var)]).ravel()
            out[i, f * 3 * len(lam) : (f + 1) * 3 * len(lam)] = block
    return out


def test_c04_feature_oracle():
    t0 = time.perf_counter()
    lams = [5.0, 3.0, 1.0, 0.1, 0.01]
    worst = 0.0
    for seed in (1, 2):
        recs = random_records(1000, seed=seed)
        got, want = featurize(recs, lambdas=lams), prefix_features(recs, lams)
        # the std column is a square root of a cancelling difference, so it is compared squared
        got[:, 2::3] **= 2
        want[:, 2::3] **= 2
        worst = max(worst, float(np.max(np.abs(got - want) / np.maximum(np.abs(want), 1.0))))
    verdict(4, worst <= 1e-9, f"2 streams x 1000 packets x 5 lambdas, worst rel err {worst:.1e}",
            time.perf_counter() - t0, 10)


# -- the shipped fixture, run once for 5, 6, 7, 8, 9, 10 and twice for 11 -------------------

@pytest.fixture(scope="module")
def fixture_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    cfg = ExperimentConfig.load(shipped_config("acceptance"))
    t0 = time.perf_counter()
    exp = run(cfg, out)
    return exp, out, time.perf_counter() - t0


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_c05_dr_collapse(fixture_run):
    exp, out, seconds = fixture_run
    t3 = {(r["nids"], r["attack"]): r for r in rows(out / "table3.csv")}
    parts, ok = [], True
    for kind in ("ae", "kitnet", "iforest"):
        r = t3[(kind, "flood")]
        b, a, f = float(r["dr_before"]), float(r["dr_after"]), float(r["fpr_holdout"])
        ok &= b >= 90 and a <= 5 and f <= 5 and r["status"] == "ok"
        parts.append(f"{kind} {b:.2f}->{a:.2f} fpr {f:.2f}")
    verdict(5, ok, "flood DR before->after (W=50), holdout FPR: " + "; ".join(parts), seconds, 600)


def test_c06_window_sweep(fixture_run):
    exp, out, seconds = fixture_run
    t4 = rows(out / "table4.csv")
    shaped = list(t4[0].keys()) == ["nids", "attack", "dr_before", "dr_after_w3", "dr_after_w50",
                                    "dr_after_w150", "fpr_holdout", "status"]
    ok, parts = shaped, []
    for r in t4:
        if r["nids"] in ("ae", "kitnet", "iforest"):
            d3, d150 = float(r["dr_after_w3"]), float(r["dr_after_w150"])
            ok &= d150 <= d3 + 1.0
            parts.append(f"{r['nids']}/{r['attack']} {d3:.2f}/{d150:.2f}")
    ok &= t4[-1]["nids"] == "reshaper"
    verdict(6, ok, "W=3 vs W=150 DR after: " + "; ".join(parts), seconds, 1800)


def test_c07_content_preserved(fixture_run):
    exp, out, _ = fixture_run
    checked = 0
    ok = True
    for name, attack in exp.attacks.items():
        original = [r.content_line() for r in attack]
        for W in exp.cfg.windows:
            shaped = read_canonical(out / "traces" / f"{name}_reshaped_w{W}.txt")
            ts = shaped.timestamps()
            ok &= [r.content_line() for r in shaped] == original and bool(np.all(np.diff(ts) >= 0))
            checked += 1
    verdict(7, ok, f"{checked} reshaped traces, every non-timestamp field identical, timestamps non-decreasing")


def test_c08_offline_equals_streaming(fixture_run):
    exp, out, _ = fixture_run
    model = load_model(out / "models" / "reshaper_w50.txt")
    ok = True
    for name in ("flood", "scan", "mitm"):
        trace = exp.attacks[name]
        state = seed_history(model, trace[0].timestamp)
        steps = []
        for rec in trace:
            t, state = reshape_step(model, state, rec)
            steps.append(t)
        ok &= reshape_offline(model, trace).timestamps().tolist() == steps
    verdict(8, ok, "flood, scan, mitm: offline timestamps == folded steps, exact")


def test_c09_end_to_end(fixture_run):
    exp, out, _ = fixture_run
    t0 = time.perf_counter()
    reshaper = exp.reshaper(exp.cfg.baseline_window)
    flood = exp.attacks["flood"]
    offline = reshape_offline(reshaper, flood)
    exact = True
    for kind in exp.cfg.nids_kinds:
        model, th = exp.detector(kind)
        res = run_e2e(reshaper, flood, NetworkModel(), model, th, exp.context)
        exact &= np.array_equal(res.report.scores, model.score(exp.context.features(offline)))
    e2e = rows(out / "e2e.csv")
    drs = {r["nids"]: float(r["dr"]) for r in e2e}
    responses = int(e2e[0]["responses"])
    ok = exact and responses > 0 and all(v <= 5 for v in drs.values())
    verdict(9, ok, f"degenerate network scores exact: {exact}; with {responses} responses DR "
                   + ", ".join(f"{k} {v:.2f}" for k, v in drs.items()), time.perf_counter() - t0, 300)


def test_c10_mitigation(fixture_run):
    exp, out, _ = fixture_run
    t0 = time.perf_counter()
    table = [r for r in csv.reader(open(out / "mitigation.csv"))]
    kinds = {r[0] for r in table[1:]}
    shaped = table[0] == ["classifier", "held_out_attack", "dr", "fpr"] and \
        {"logistic_regression", "gaussian_nb", "random_forest"} <= kinds and \
        sum(r[1] == "average" for r in table) == 4 and len(exp.cfg.mitigation_attacks) == 4
    plan = exp.mitigation_plan()
    ben, mal = run_cv(plan, "always_benign"), run_cv(plan, "always_malicious")
    degenerate = all((f.dr, f.fpr) == (0.0, 0.0) for f in ben.folds) and \
        all((f.dr, f.fpr) == (100.0, 100.0) for f in mal.folds)
    rng = np.random.default_rng(10)
    X = np.vstack([rng.normal(-3, 1, size=(2000, 1)), rng.normal(3, 1, size=(2000, 1))])
    y = np.repeat([0, 1], 2000)
    acc = float(np.mean(fit("gnb", X, y).predict(X) == y)) * 100
    verdict(10, shaped and degenerate and acc > 99,
            f"leave-one-attack-out report over {len(plan.names)} attacks; degenerate folds exact: {degenerate}; "
            f"GNB blobs accuracy {acc:.2f}%", time.perf_counter() - t0, 300)


def test_c11_determinism(fixture_run, tmp_path):
    _, first, _ = fixture_run
    run(ExperimentConfig.load(shipped_config("acceptance")), tmp_path)
    csvs = sorted(str(p.relative_to(first)) for p in first.rglob("*.csv"))
    other = sorted(str(p.relative_to(tmp_path)) for p in tmp_path.rglob("*.csv"))
    _, mismatch, errors = filecmp.cmpfiles(first, tmp_path, csvs, shallow=False)
    ok = csvs == other and not mismatch and not errors
    verdict(11, ok, f"{len(csvs)} CSV files byte-identical across two runs"
                    + (f"; differing: {mismatch + errors}" if not ok else ""))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
