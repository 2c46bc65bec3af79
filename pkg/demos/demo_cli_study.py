"""
A complete study from the command line
======================================

The ``fctica`` command runs every stage of a simulation study from one
``key = value`` config: simulate, estimate priors, fit, posterior FC and
evaluate.  This script writes a reduced config, runs it through the same
entry point as the console script, and prints the summary table.

Run with ``python3 demos/demo_cli_study.py [out_dir]``; it takes about ten
seconds.  The equivalent shell command is::

    fctica run-all --config small.cfg
"""
import os
import sys
import tempfile

from fctica.cli import main

CONFIG = """\
# a small study: 30 x 30 grid, 20 training and 3 test subjects
grid = 30x30
n_train = 20
n_test = 3
T_total = 400
T_model = 200
n_perm = 20
K = 2000
n_u = 1000
posterior_n_vb1 = 500
durations = 100
fit_retest = true
"""

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="fctica-demo-")
cfg_path = os.path.join(out, "small.cfg")
os.makedirs(out, exist_ok=True)
with open(cfg_path, "w") as fh:
    fh.write(CONFIG + f"out_dir = {os.path.join(out, 'run')}\n")

status = main(["run-all", "--config", cfg_path, "--quiet"])
print(f"\nexit status {status}; outputs under {os.path.join(out, 'run')}\n")
with open(os.path.join(out, "run", "metrics", "summary.csv")) as fh:
    print(fh.read())
