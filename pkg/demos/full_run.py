"""
Full default run
================

Runs every stage with the default configuration into one output root and
records wall-clock minutes per stage next to it, as ``<out>.timings.json``.

    python3 demos/full_run.py runs/default

The acceptance suite can then reuse the run instead of training again:

    GAZEDECODE_RUN_DIR=runs/default pytest tests/test_acceptance.py

Expect 10 to 15 minutes on one laptop core.
"""

# %%
# Stages
# ------
# The chain mirrors the command line. The last entry repeats the ablation
# with uninformative gaze: one target among sixteen items, fixated at the
# base rate of 1/16, so neither encoding mode has an edge.

import json
import sys
import time
from pathlib import Path

from gazedecode.cli import main

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/default")
chain = [
    ["gen-data"],
    ["train-encoder"],
    ["train-cvae"],
    ["evaluate"],
    ["ablate"],
    ["--set", "gaze.p_target=0.0625", "--set", "gaze.n_target=1", "ablate", "--name", "ablate_null"],
]

# %%
# Run and time
# ------------

seconds = {}
for cmd in chain:
    name = cmd[-1] if "--name" in cmd else cmd[0]
    start = time.perf_counter()
    code = main(["--out", str(out), "-v", *cmd])
    seconds[name] = time.perf_counter() - start
    print(f"{name}: exit {code}, {seconds[name] / 60:.1f} min")
    if code:
        sys.exit(code)

out.parent.joinpath(f"{out.name}.timings.json").write_text(json.dumps(seconds, indent=2) + "\n")

# %%
# Headline numbers
# ----------------

rec = json.loads((out / "evaluate" / "report.json").read_text())["recognition"]
abl = json.loads((out / "ablate" / "report.json").read_text())["ablation"]
null = json.loads((out / "ablate_null" / "report.json").read_text())["ablation"]
print(f"recognition: {rec['overall_accuracy']:.3f} over {rec['sessions']} sessions")
for name, acc in rec["per_category_accuracy"].items():
    print(f"  {name:<9} {acc:.2f}")
print(f"local vs global: win rate {abl['local_win_rate']:.3f}, chi2 {abl['chi2']:.2f}, p {abl['p_value']:.2g}")
print(f"uninformative gaze: win rate {null['local_win_rate']:.3f}, p {null['p_value']:.2f}")
