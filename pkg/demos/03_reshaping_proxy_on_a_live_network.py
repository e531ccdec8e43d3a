"""The reshaper as an in-line proxy facing a target that talks back.

The simulator delays every packet by a latency plus jitter and lets the target
answer some of them.  Answers reach the NIDS as extra benign packets and flow
back to the proxy, whose reshaper folds them into its history.  Answering too
often lifts the conversation's rate statistics and some malicious packets
start to alarm again.
"""

from timeshape.netsim import NetworkModel, ResponseRule, run_e2e
from timeshape.nids import calibrate_threshold, iforest_fit
from timeshape.pipeline import FeatureContext
from timeshape.reshaper import fit_reshaper
from timeshape.synthetic import TrafficProfile, generate
from timeshape.trace_io import TrafficTrace

benign = generate(TrafficProfile("periodic_benign", 9000, 0.01, 0.2, size_mean=300, seed=1))
flood = generate(TrafficProfile("flood_attack", 1000, 0.01, 0.2, size_mean=300, seed=2))
ctx = FeatureContext(TrafficTrace(benign.records[:4000]), [5.0, 3.0, 1.0])
nids = iforest_fit(ctx.context_features[1000:], seed=0)
th = calibrate_threshold(nids.score(ctx.features(TrafficTrace(benign.records[8000:]))), "percentile", 99.5)
reshaper, _ = fit_reshaper(TrafficTrace(benign.records[4000:8000]), window=10, epochs=1, seed=3)

for every in (None, 500, 50, 5):
    rules = () if every is None else (ResponseRule.from_mapping(
        {"match": {"dst_ip": "10.0.0.0"}, "every": every, "delay": 0.001, "size": 300}),)
    net = NetworkModel(base_latency=0.0005, jitter=0.0002, response_rules=rules, seed=4)
    res = run_e2e(reshaper, flood, net, nids, th, ctx)
    answers = sum(lab == "benign" for lab in res.report.labels)
    print(f"answer every {str(every or '-'):>4}: {answers:4d} answers, "
          f"malicious DR {res.malicious_report().dr:6.2f}%, {len(res.events)} events")

print("\nfirst events of the last run:")
for ev in res.events[:8]:
    print("  " + ev.to_json())
