"""Run a whole experiment config and print its tables.

    python3 demos/05_full_experiment.py [quick|acceptance|path/to/config.toml] [out_dir]

The acceptance config takes a few minutes on one core.
"""

import sys
from pathlib import Path

from timeshape.experiment import ExperimentConfig, run, shipped_config

name = sys.argv[1] if len(sys.argv) > 1 else "quick"
path = Path(name) if name.endswith(".toml") else shipped_config(name)
out = Path(sys.argv[2] if len(sys.argv) > 2 else f"runs/{path.stem}")
exp = run(ExperimentConfig.load(path), out)
for table in ("table3.csv", "table4.csv", "e2e.csv", "mitigation.csv"):
    f = out / table
    if f.exists():
        print(f"== {table}")
        print(f.read_text())
