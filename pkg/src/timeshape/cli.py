"""Command-line entry points, one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from . import features as feat
from .config import load_config
from .experiment import ExperimentConfig, run
from .mitigation import CvPlan, run_cv, write_cv_table
from .netsim import NetworkModel, run_e2e
from .nids import calibrate_threshold, detect, load_nids, parse_method, save_nids, train_nids
from .nids.detect import format_rate
from .pipeline import FeatureContext
from .reshaper import fit_reshaper, load_model, reshape_offline, save_model
from .synthetic import generate, load_profile
from .trace_io import read_canonical, read_trace, write_canonical

log = logging.getLogger("timeshape")


def _lambdas(text):
    return [float(x) for x in text.split(",")] if text else list(feat.DEFAULT_LAMBDAS)


def cmd_ingest(a):
    trace = read_trace(a.input, label=a.label)
    write_canonical(trace, a.out)
    msg = f"{len(trace)} packets -> {a.out}"
    if trace.truncated:
        msg += " (capture was truncated; kept the packets read so far)"
    print(msg)


def cmd_synth(a):
    trace = generate(load_profile(a.profile))
    write_canonical(trace, a.out)
    print(f"{len(trace)} {trace.name} packets -> {a.out}")


def cmd_featurize(a):
    trace = read_canonical(a.input)
    lams = _lambdas(a.lambdas)
    if a.context:
        X = FeatureContext(read_canonical(a.context), lams).features(trace)
    else:
        X = feat.featurize(trace, lambdas=lams)
    feat.write_features(a.out, X, trace.labels(), [r.seq_index for r in trace.records])
    print(f"{X.shape[0]} vectors of width {X.shape[1]} -> {a.out}")


def cmd_train_reshaper(a):
    benign = read_canonical(a.benign)
    model, losses = fit_reshaper(benign, a.window, a.epochs, seed=a.seed,
                                 log=log.info)
    save_model(model, a.out)
    print(f"W={a.window} final loss {losses[-1]:.6g} -> {a.out}")


def cmd_reshape(a):
    out = reshape_offline(load_model(a.model), read_canonical(a.malicious))
    write_canonical(out, a.out)
    print(f"{len(out)} packets reshaped -> {a.out}")


def cmd_train_nids(a):
    X, _, labels = feat.read_features(a.benign)
    if any(lab == "malicious" for lab in labels):
        raise SystemExit("train-nids: training features must not contain malicious vectors")
    options = {}
    if a.epochs is not None:
        options["epochs"] = a.epochs
    model = train_nids(a.kind, X, seed=a.seed, **options)
    save_nids(model, a.out)
    print(f"{a.kind} trained on {len(X)} vectors -> {a.out}")


def cmd_score(a):
    model = load_nids(a.model)
    X, seq, labels = feat.read_features(a.input)
    if a.calibration:
        Xc, _, _ = feat.read_features(a.calibration)
    else:
        Xc = X[[lab == "benign" for lab in labels]]
    method, pct = parse_method(a.threshold_method)
    th = calibrate_threshold(model.score(Xc), method, pct, a.phi)
    rep = detect(model, th, X, labels, seq)
    rep.write_csv(a.report)
    print(f"threshold {th.describe()}  DR {format_rate(rep.dr)}  FPR {format_rate(rep.fpr)}")


def cmd_mitigate(a):
    Xb, _, _ = feat.read_features(a.benign)
    if a.holdout:
        Xh, _, _ = feat.read_features(a.holdout)
    else:
        half = len(Xb) // 2
        Xb, Xh = Xb[:half], Xb[half:]
    attacks = {Path(p).stem: feat.read_features(p)[0] for p in a.attacks}
    rep = run_cv(CvPlan(Xb, Xh, attacks, seed=a.seed), a.kind)
    write_cv_table([rep], a.report)
    print(f"{a.kind}: mean DR {rep.mean_dr:.2f}  mean FPR {rep.mean_fpr:.2f} -> {a.report}")


def cmd_e2e(a):
    net_cfg = load_config(a.net)
    net = NetworkModel.from_mapping(net_cfg.get("network", net_cfg))
    reshaper = load_model(a.reshaper)
    nids = load_nids(a.nids)
    ctx = FeatureContext(read_canonical(a.context), _lambdas(a.lambdas))
    method, pct = parse_method(a.threshold_method)
    th = calibrate_threshold(nids.score(ctx.features(read_canonical(a.calibration))), method, pct, a.phi)
    res = run_e2e(reshaper, read_canonical(a.malicious), net, nids, th, ctx)
    res.report.write_csv(a.report)
    res.write_events(a.events)
    print(f"DR {format_rate(res.report.dr)}  response FPR {format_rate(res.report.fpr)}  "
          f"{len(res.events)} events -> {a.events}")


def cmd_run(a):
    exp = run(ExperimentConfig.load(a.config), a.out)
    failed = [k for k in exp.nids_errors] + [f"W={w}" for w in exp.reshaper_errors]
    print(f"outputs in {a.out}" + (f"; failed stages: {', '.join(failed)}" if failed else ""))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="timeshape", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="pcap or canonical trace -> canonical trace")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--label", choices=["benign", "malicious"])
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="generate a trace from a profile file")
    s.add_argument("--profile", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("featurize", help="canonical trace -> feature file")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lambdas", help="comma-separated decay rates")
    s.add_argument("--context", help="benign canonical trace to run through the extractor first")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train-reshaper", help="fit the delay model on benign traffic")
    s.add_argument("--benign", required=True)
    s.add_argument("--window", type=int, required=True)
    s.add_argument("--epochs", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_reshaper)

    s = sub.add_parser("reshape", help="rewrite a trace's timestamps with a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--malicious", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reshape)

    s = sub.add_parser("train-nids", help="train an anomaly detector on benign features")
    s.add_argument("--kind", choices=["ae", "kitnet", "iforest"], required=True)
    s.add_argument("--benign", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_nids)

    s = sub.add_parser("score", help="score features, calibrate a threshold, write a report")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--threshold-method", default="max", help="max or pctl:<p>")
    s.add_argument("--phi", type=float, default=1.0)
    s.add_argument("--calibration", help="benign features for the threshold (default: benign rows of --in)")
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("mitigate", help="leave-one-attack-out supervised evaluation")
    s.add_argument("--benign", required=True)
    s.add_argument("--attacks", nargs="+", required=True)
    s.add_argument("--kind", choices=["lr", "gnb", "rf", "always_benign", "always_malicious"], required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--holdout", help="benign features for FPR (default: second half of --benign)")
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_mitigate)

    s = sub.add_parser("e2e", help="simulate the reshaping proxy against a target network")
    s.add_argument("--reshaper", required=True)
    s.add_argument("--nids", required=True)
    s.add_argument("--malicious", required=True)
    s.add_argument("--net", required=True, help="TOML network model")
    s.add_argument("--context", required=True, help="benign canonical trace the NIDS has already seen")
    s.add_argument("--calibration", required=True, help="benign canonical trace for the threshold")
    s.add_argument("--threshold-method", default="pctl:99.5")
    s.add_argument("--phi", type=float, default=1.0)
    s.add_argument("--lambdas", help="comma-separated decay rates")
    s.add_argument("--report", required=True)
    s.add_argument("--events", required=True)
    s.set_defaults(func=cmd_e2e)

    s = sub.add_parser("run", help="run a whole experiment config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        print(f"timeshape {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0
