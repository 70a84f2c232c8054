"""The experiment harness end to end on a small grid.

Writes a config, runs every (scenario, method, seed) cell through the command
line entry point, then builds the report tables and SVG plots. The grid sweeps
the instability weight lambda so the report can draw accuracy against lambda.
"""

import json
import sys
import tempfile
from pathlib import Path

from recap.cli import main

config = {
    "task": {"n_classes": 10, "in_dim": 32, "proto_scale": 0.7, "n_source": 3000},
    "model": {"hidden": 128, "feat_dim": 128, "epochs": 10},
    "methods": [{"kind": "none"}, {"kind": "entropy"}]
    + [{"kind": "recap", "name": f"recap_lam{lam}", "lambda": lam} for lam in (0.0, 0.2, 0.5, 1.0, 2.0)],
    "scenarios": [{"name": "label_shift-rotate", "batch_size": 64, "length": 4000,
                   "domains": [{"kind": "rotate", "severity": 5}], "label_schedule": {"imbalanced": "inf"}},
                  {"name": "bs1-scale", "batch_size": 1, "length": 2000,
                   "domains": [{"kind": "scale", "severity": 5}]}],
    "seeds": [1, 2],
    "probe": {"n": 64, "last": 1000, "families": ["label_shift"]},
}

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="recap_demo_"))
out.mkdir(parents=True, exist_ok=True)
(out / "demo_config.json").write_text(json.dumps(config, indent=2))
main(["run", "--config", str(out / "demo_config.json"), "--out", str(out)])
main(["report", "--out", str(out)])
print("outputs in", out)
for p in sorted(out.glob("*.svg")):
    print("  plot", p.name)
