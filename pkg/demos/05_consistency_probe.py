"""Prediction consistency inside the feature region after adaptation.

After each prediction, 128 neighbours are drawn from the region around the
feature. The probe records how often their argmax disagrees and the mean KL
from the centre prediction. The stream is label-shifted: classes arrive in
sorted blocks.
"""

import numpy as np

from recap.adapt import MethodConfig, run_stream
from recap.config import RunConfig
from recap.experiment import prepare_source
from recap.region import RecapHyper
from recap.stream import build_stream, default_scenarios

src = prepare_source(RunConfig())
scenario = next(s for s in default_scenarios() if s.name == "label_shift-rotate")
hyper = RecapHyper.for_classes(src.task.n_classes)
for seed in (1, 2, 3):
    stream = build_stream(src.task, scenario.with_seed(seed))
    row = []
    for kind in ("entropy", "recap"):
        log, _ = run_stream(src.backbone, src.head, stream, MethodConfig(kind, hyper), src.region,
                            probe_n=128, probe_seed=seed, probe_last=1000)
        row.append(f"{kind} KL {log.tail_probe_kl():.4f} flips {np.nanmean(log.probe_inconsistent):.3f}")
    print(f"seed {seed}: " + " | ".join(row))
