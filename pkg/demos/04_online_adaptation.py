"""Online adaptation on a corrupted batch-size-1 stream.

A small backbone is pretrained on clean synthetic data. It then sees a rotated
test stream one sample at a time. Each prediction is scored before the update
it triggers. Only the normalisation affine parameters adapt.
"""

from recap.adapt import MethodConfig, run_stream
from recap.config import RunConfig
from recap.experiment import prepare_source
from recap.region import RecapHyper
from recap.stream import build_stream, default_scenarios

src = prepare_source(RunConfig())
print(f"source accuracy {src.source_accuracy:.3f}")
scenario = next(s for s in default_scenarios(length=5000) if s.name == "bs1-rotate").with_seed(1)
stream = build_stream(src.task, scenario)
hyper = RecapHyper.for_classes(src.task.n_classes)

for kind in ("none", "entropy", "entropy_select", "recap"):
    log, _ = run_stream(src.backbone, src.head, stream, MethodConfig(kind, hyper), src.region)
    s = log.summary()
    print(f"{kind:<15s} online accuracy {s['accuracy']:.4f}  updates {s['backwards']:>5d}"
          f"  selected {s['selected_fraction']:.2f}")
