"""Can a supervised detector learn to spot reshaped traffic?

Train on benign features plus all reshaped attacks but one, test on the one
left out.  The shipped small config supplies the data; the always-benign and
always-malicious rows anchor the scale.
"""

from timeshape.experiment import Experiment, ExperimentConfig, shipped_config
from timeshape.mitigation import run_cv

exp = Experiment(ExperimentConfig.load(shipped_config("quick")))
plan = exp.mitigation_plan()
print(f"benign train {len(plan.benign_train)}, benign test {len(plan.benign_test)}, "
      f"attacks {', '.join(f'{k} ({len(v)})' for k, v in plan.attacks.items())}")
for kind in ("always_benign", "always_malicious", "lr", "gnb", "rf"):
    rep = run_cv(plan, kind)
    folds = "  ".join(f"{f.attack}: DR {f.dr:6.2f} FPR {f.fpr:5.2f}" for f in rep.folds)
    print(f"{kind:>16}  {folds}")
