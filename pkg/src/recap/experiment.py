"""Experiment pipeline: source model, region estimate, grid runs and outputs.

Output layout of one grid run::

    <out>/config.json                  exact RunConfig used
    <out>/source.npz                   pretrained checkpoint
    <out>/runs/<scenario>__<method>__seed<k>.csv   per-step metrics
    <out>/runs/<scenario>__<method>__seed<k>.json  run summary sidecar
    <out>/summary.csv                  one row per (scenario, method, seed)
    <out>/aggregate.csv                seed means per (scenario, method)

CSV files start with a ``# schema_version=N`` comment line.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapt import MetricsLog, MethodConfig, run_stream
from .config import MethodSpec, RunConfig
from .model import TinyBackbone, forward_batch, load_checkpoint, pretrain_source, save_checkpoint, accuracy
from .region import AffineHead, RegionSpec, estimate_region
from .stream import StreamScenario, SyntheticTask, build_stream, gen_source_dataset, scenario_family

log = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1
METRICS_COLUMNS = ("step", "batch", "pred", "true", "domain", "correct", "l_re", "entropy", "selected",
                   "alpha", "probe_inconsistent", "probe_kl", "batch_loss", "batch_forwards",
                   "batch_backwards", "batch_ns")
SUMMARY_COLUMNS = ("scenario", "method", "seed", "accuracy", "forwards", "backwards", "selected_fraction",
                   "mean_probe_kl", "tail_probe_kl", "mean_probe_inconsistent", "collapsed", "total_ns")
TIMING_COLUMNS = ("batch_ns", "total_ns")


@dataclass
class SourceModel:
    task: SyntheticTask
    backbone: TinyBackbone
    head: AffineHead
    region: RegionSpec
    source_accuracy: float


def prepare_source(cfg: RunConfig, out_dir: Path | None = None) -> SourceModel:
    """Pretrain (or load) the source model and estimate the feature region."""
    t = cfg.task
    task = SyntheticTask.make(t.n_classes, t.in_dim, t.proto_scale, t.noise, t.seed)
    X, y = gen_source_dataset(task, t.n_source)
    m = cfg.model
    if m.checkpoint:
        backbone, head = load_checkpoint(m.checkpoint)
        acc = accuracy(X, y, backbone, head)
    else:
        backbone, head, acc = pretrain_source((X, y), m.epochs, m.lr, m.seed, m.hidden, m.feat_dim,
                                              weight_decay=m.weight_decay)
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "source.npz", backbone, head)
    # Held-out source draw for the region: independent of the training sample.
    Xr, _ = gen_source_dataset(task, cfg.region.n_source_features, seed=t.seed + 7919)
    region = estimate_region(forward_batch(Xr, backbone, head).z, cfg.region.tau)
    log.info("source accuracy %.4f", acc)
    return SourceModel(task, backbone, head, region, acc)


def method_config(spec: MethodSpec, n_classes: int) -> MethodConfig:
    return MethodConfig(spec.kind, spec.hyper(n_classes), spec.lr, spec.momentum)


def run_cell(src: SourceModel, scenario: StreamScenario, spec: MethodSpec, seed: int,
             probe_n: int = 0, probe_last: int | None = None) -> MetricsLog:
    stream = build_stream(src.task, scenario.with_seed(seed))
    region = src.region if spec.tau is None else src.region.with_tau(spec.tau)
    metrics, _ = run_stream(src.backbone, src.head, stream, method_config(spec, src.task.n_classes),
                            region, probe_n=probe_n, probe_seed=seed, probe_last=probe_last)
    return metrics


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def write_metrics_csv(path, metrics: MetricsLog) -> None:
    b = metrics.batch
    cols = {
        "step": np.arange(metrics.n_steps), "batch": b, "pred": metrics.pred, "true": metrics.true,
        "domain": metrics.domain, "correct": metrics.pred == metrics.true, "l_re": metrics.l_re,
        "entropy": metrics.entropy, "selected": metrics.selected, "alpha": metrics.alpha,
        "probe_inconsistent": metrics.probe_inconsistent, "probe_kl": metrics.probe_kl,
        "batch_loss": metrics.batch_loss[b], "batch_forwards": metrics.batch_forwards[b],
        "batch_backwards": metrics.batch_backwards[b], "batch_ns": metrics.batch_ns[b],
    }
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={METRICS_SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(METRICS_COLUMNS)
        for i in range(metrics.n_steps):
            w.writerow([_fmt(cols[c][i]) for c in METRICS_COLUMNS])


def read_csv(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"expected file not found: {path}")
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def summary_row(scenario: str, method: str, seed: int, metrics: MetricsLog) -> dict:
    s = metrics.summary()
    return {
        "scenario": scenario, "method": method, "seed": seed, "accuracy": s["accuracy"],
        "forwards": s["forwards"], "backwards": s["backwards"], "selected_fraction": s["selected_fraction"],
        "mean_probe_kl": s["mean_probe_kl"], "tail_probe_kl": s["tail_probe_kl"],
        "mean_probe_inconsistent": s["mean_probe_inconsistent"], "collapsed": s["collapse"] is not None,
        "total_ns": int(metrics.batch_ns.sum()),
    }


def write_table(path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={METRICS_SCHEMA_VERSION}\n")
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else _fmt(r[k])) for k in columns})


def aggregate(rows: list[dict]) -> list[dict]:
    out = []
    keys = sorted({(r["scenario"], r["method"]) for r in rows}, key=lambda k: (k[0], k[1]))
    order = {}
    for r in rows:
        order.setdefault((r["scenario"], r["method"]), len(order))
    for key in sorted(keys, key=order.get):
        sel = [r for r in rows if (r["scenario"], r["method"]) == key]
        acc = np.array([float(r["accuracy"]) for r in sel])
        kl = [float(r["tail_probe_kl"]) for r in sel if r.get("tail_probe_kl") not in (None, "")]
        out.append({"scenario": key[0], "method": key[1], "seeds": len(sel),
                    "mean_accuracy": float(acc.mean()), "std_accuracy": float(acc.std()),
                    "mean_tail_probe_kl": float(np.mean(kl)) if kl else None})
    return out


def run_grid(cfg: RunConfig, out_dir=None, threads: int = 1, write_runs: bool = True) -> dict:
    """Execute every (scenario, method, seed) cell; returns summary rows and aggregates."""
    out = Path(out_dir or cfg.out)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    src = prepare_source(cfg, out)
    cells = [(sc, m, s) for sc in cfg.scenarios for m in cfg.methods for s in cfg.seeds]

    def work(cell):
        sc, spec, seed = cell
        probe_n = cfg.probe_n if scenario_family(sc.name or "") in cfg.probe_families else 0
        metrics = run_cell(src, sc, spec, seed, probe_n, cfg.probe_last)
        stem = f"{sc.name or 'scenario'}__{spec.label}__seed{seed}"
        row = summary_row(sc.name, spec.label, seed, metrics)
        if write_runs:
            write_metrics_csv(out / "runs" / f"{stem}.csv", metrics)
            side = {"schema_version": METRICS_SCHEMA_VERSION, "scenario": sc.to_dict(),
                    "method": spec.to_dict(), "seed": seed, **metrics.summary()}
            (out / "runs" / f"{stem}.json").write_text(json.dumps(side, indent=2) + "\n")
        log.info("%s acc=%.4f", stem, row["accuracy"])
        return row

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(work, cells))
    else:
        rows = [work(c) for c in cells]
    agg = aggregate(rows)
    write_table(out / "summary.csv", rows, SUMMARY_COLUMNS)
    write_table(out / "aggregate.csv", agg,
                ("scenario", "method", "seeds", "mean_accuracy", "std_accuracy", "mean_tail_probe_kl"))
    return {"rows": rows, "aggregate": agg, "source_accuracy": src.source_accuracy, "out": str(out)}
