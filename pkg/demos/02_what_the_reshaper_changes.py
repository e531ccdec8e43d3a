"""What reshaping does and does not touch.

Only timestamps move.  Every other field of every packet is byte-identical in
the canonical text form, and the new timestamps never go backwards.  The
reshaper is also a pure function of its history, so rewriting a whole trace
at once gives the same times as feeding it one packet at a time.
"""

import numpy as np

from timeshape.reshaper import fit_reshaper, reshape_offline, reshape_step, seed_history
from timeshape.synthetic import TrafficProfile, generate

benign = generate(TrafficProfile("bursty_benign", 4000, base_delta=0.01, jitter=0.1, size_mean=500,
                                 size_std=80, seed=5))
scan = generate(TrafficProfile("scan_attack", 300, base_delta=0.01, jitter=0.2, seed=6))

model, _ = fit_reshaper(benign, window=16, epochs=2, seed=1)
shaped = reshape_offline(model, scan)

for a, b in list(zip(scan, shaped))[:4]:
    print("in ", a.to_line())
    print("out", b.to_line())
same = all(a.content_line() == b.content_line() for a, b in zip(scan, shaped))
print(f"\ncontent identical on all {len(scan)} packets: {same}")
print(f"timestamps non-decreasing: {bool(np.all(np.diff(shaped.timestamps()) >= 0))}")

state = seed_history(model, scan[0].timestamp)
steps = []
for rec in scan:
    t, state = reshape_step(model, state, rec)
    steps.append(t)
print(f"offline == streaming: {steps == shaped.timestamps().tolist()}")

lo, hi = np.percentile(benign.deltas(), [5, 95])
print(f"benign delays 5-95%: {lo * 1e3:.2f}-{hi * 1e3:.2f} ms; "
      f"scan median {np.median(scan.deltas()) * 1e3:.2f} ms -> {np.median(shaped.deltas()) * 1e3:.2f} ms")
