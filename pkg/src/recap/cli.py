"""Command-line entry point: ``recap <subcommand> [flags]``.

Subcommands: verify, gradcheck, pretrain, run, bench, probe, report. The exit
status is 0 only when every requested piece of work succeeded; suite failures
print the offending instances as JSON lines so they can be replayed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import verify
from .adapt import bench_proxy_vs_mc, run_stream, step_counters
from .config import RunConfig, load_config
from .experiment import (aggregate, method_config, prepare_source, read_csv, run_grid,
                         write_table)
from .model import forward_batch
from .region import RegionSpec
from .stream import build_stream, gen_source_dataset, scenario_family

log = logging.getLogger("recap")

BENCH_COLUMNS = ("method", "forwards", "backwards", "steps", "forwards_per_step",
                 "backwards_per_step", "median_step_ns")
TIMING_TABLE_COLUMNS = ("batch", "n_classes", "dim", "n_mc", "repeats", "closed_ns", "mc_ns", "speedup")
PROBE_COLUMNS = ("step", "pred", "true", "probe_kl", "probe_inconsistent")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def _out(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report_suites(results) -> int:
    for r in results:
        print(r.line())
        for inst in r.failures:
            print("  failure " + json.dumps({"suite": r.name, **inst}))
    return 0 if all(r.ok for r in results) else 1


def cmd_verify(args) -> int:
    suites = tuple(args.suite) if args.suite else verify.VERIFY_SUITES
    return _report_suites(verify.run_verify(suites))


def cmd_gradcheck(args) -> int:
    suites = tuple(args.suite) if args.suite else verify.GRAD_SUITES
    return _report_suites(verify.run_gradcheck(args.samples, suites))


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    cfg.dump(out / "config.json")
    src = prepare_source(cfg, out)
    print(f"source accuracy {src.source_accuracy:.4f}; checkpoint {out / 'source.npz'}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    res = run_grid(cfg, out, threads=args.threads)
    print(f"source accuracy {res['source_accuracy']:.4f}")
    for row in res["aggregate"]:
        print(f"{row['scenario']:<24s} {row['method']:<16s} acc {row['mean_accuracy']:.4f}"
              f" +- {row['std_accuracy']:.4f}")
    collapsed = [r for r in res["rows"] if r["collapsed"]]
    for r in collapsed:
        print("  collapse " + json.dumps({k: r[k] for k in ("scenario", "method", "seed")}))
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    src = prepare_source(cfg, out)
    seed = cfg.seeds[0]
    X, _ = gen_source_dataset(src.task, 64, seed=seed)
    Z = forward_batch(X, src.backbone, src.head).z
    rep = bench_proxy_vs_mc(src.head, src.region, Z, n_mc=128, repeats=args.samples or 50, seed=seed)
    timing = [{"batch": rep.batch, "n_classes": src.head.n_classes, "dim": src.head.dim,
               "n_mc": rep.n_mc, "repeats": rep.repeats, "closed_ns": rep.closed_ns,
               "mc_ns": rep.mc_ns, "speedup": rep.speedup}]
    write_table(out / "bench_proxy.csv", timing, TIMING_TABLE_COLUMNS)
    sc = cfg.scenarios[0].with_seed(seed)
    stream = build_stream(src.task, replace(sc, length=min(sc.length, 2000)))
    spec = next((m for m in cfg.methods if m.kind == "recap"), cfg.methods[0])
    rows = step_counters(src.backbone, src.head, stream, src.region, spec.hyper(src.task.n_classes))
    write_table(out / "bench.csv", rows, BENCH_COLUMNS)
    print(f"closed form {rep.closed_ns / 1e3:.1f} us, MC {rep.mc_ns / 1e3:.1f} us, "
          f"speedup {rep.speedup:.1f}x")
    for r in rows:
        print(f"{r['method']:<16s} forwards {r['forwards']:>6d} backwards {r['backwards']:>6d} "
              f"median_step_ns {r['median_step_ns']:.0f}")
    return 0


def cmd_probe(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    src = prepare_source(cfg, out)
    names = [s.name for s in cfg.scenarios]
    sc = next((s for s in cfg.scenarios if s.name == args.scenario), None)
    if sc is None:
        raise SystemExit(f"unknown scenario {args.scenario!r}; choose from {names}")
    labels = [m.label for m in cfg.methods]
    spec = next((m for m in cfg.methods if m.label == args.method), None)
    if spec is None:
        raise SystemExit(f"unknown method {args.method!r}; choose from {labels}")
    region = src.region if spec.tau is None else src.region.with_tau(spec.tau)
    if args.zero_region:
        region = RegionSpec(np.zeros_like(region.sigma_diag), region.tau)
    seed = cfg.seeds[0]
    stream = build_stream(src.task, sc.with_seed(seed))
    metrics, _ = run_stream(src.backbone, src.head, stream, method_config(spec, src.task.n_classes),
                            region, probe_n=cfg.probe_n or 128, probe_seed=seed,
                            probe_last=args.last)
    rows = [{"step": i, "pred": int(metrics.pred[i]), "true": int(metrics.true[i]),
             "probe_kl": metrics.probe_kl[i], "probe_inconsistent": metrics.probe_inconsistent[i]}
            for i in range(metrics.pred.size) if np.isfinite(metrics.probe_kl[i])]
    path = out / f"probe__{sc.name}__{spec.label}__seed{seed}.csv"
    write_table(path, rows, PROBE_COLUMNS)
    kl = np.array([r["probe_kl"] for r in rows])
    print(f"{path}: {len(rows)} probed steps, mean KL {kl.mean() if kl.size else float('nan'):.6f}")
    return 0


def _method_params(run_dir: Path) -> dict[str, dict]:
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise FileNotFoundError(f"expected run config at {cfg_path}")
    cfg = load_config(cfg_path)
    return {m.label: {"kind": m.kind, "lam": m.lam,
                      "tau": m.tau if m.tau is not None else cfg.region.tau} for m in cfg.methods}


def _curves(rows: list[dict], params: dict[str, dict], key: str, fixed: str, fixed_default: float):
    # Mean accuracy per (scenario family, value of `key`) over recap runs with `fixed` at its default.
    acc: dict[tuple[str, float], list[float]] = {}
    for r in rows:
        p = params.get(r["method"])
        if p is None or p["kind"] != "recap" or p[fixed] != fixed_default:
            continue
        acc.setdefault((scenario_family(r["scenario"]), p[key]), []).append(float(r["accuracy"]))
    return [{"scenario": s, key: v, "mean_accuracy": float(np.mean(a)), "runs": len(a)}
            for (s, v), a in sorted(acc.items())]


def _kl_curves(run_dir: Path, window: int) -> list[dict]:
    out = []
    for path in sorted((run_dir / "runs").glob("*.csv")):
        scenario, method, seed = path.stem.split("__")
        kl = np.array([float(r["probe_kl"]) for r in read_csv(path) if r["probe_kl"] not in ("", None)])
        if kl.size < window:
            continue
        smooth = np.convolve(kl, np.ones(window) / window, mode="valid")
        for i in range(0, smooth.size, window):
            out.append({"scenario": scenario, "method": method, "seed": seed,
                        "probed_step": i + window, "kl": float(smooth[i])})
    return out


def _plot(path: Path, series: dict[str, tuple[list, list]], xlabel: str, ylabel: str) -> None:
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (x, y) in sorted(series.items()):
        ax.plot(x, y, marker="o" if len(x) < 20 else None, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_report(args) -> int:
    run_dir = Path(args.out or RunConfig().out)
    summary = run_dir / "summary.csv"
    if not summary.exists():
        raise FileNotFoundError(f"expected run summary at {summary}")
    rows = read_csv(summary)
    for r in rows:
        r["accuracy"] = float(r["accuracy"])
        r["tail_probe_kl"] = float(r["tail_probe_kl"]) if r.get("tail_probe_kl") else None
    params = _method_params(run_dir)
    agg = aggregate(rows)
    fam = {}
    for r in rows:
        fam.setdefault((scenario_family(r["scenario"]), r["method"]), []).append(r["accuracy"])
    fam_rows = [{"family": f, "method": m, "runs": len(a), "mean_accuracy": float(np.mean(a))}
                for (f, m), a in sorted(fam.items())]
    write_table(run_dir / "report_summary.csv", agg,
                ("scenario", "method", "seeds", "mean_accuracy", "std_accuracy", "mean_tail_probe_kl"))
    write_table(run_dir / "report_families.csv", fam_rows, ("family", "method", "runs", "mean_accuracy"))
    for r in fam_rows:
        print(f"{r['family']:<14s} {r['method']:<16s} {r['mean_accuracy']:.4f}  ({r['runs']} runs)")
    default_lam = RunConfig().methods[-1].lam
    default_tau = RunConfig().region.tau
    lam_rows = _curves(rows, params, "lam", "tau", default_tau)
    tau_rows = _curves(rows, params, "tau", "lam", default_lam)
    kl_rows = _kl_curves(run_dir, args.window)
    write_table(run_dir / "accuracy_vs_lambda.csv", lam_rows, ("scenario", "lam", "mean_accuracy", "runs"))
    write_table(run_dir / "accuracy_vs_tau.csv", tau_rows, ("scenario", "tau", "mean_accuracy", "runs"))
    write_table(run_dir / "kl_vs_step.csv", kl_rows, ("scenario", "method", "seed", "probed_step", "kl"))
    if args.plots:
        for name, data, key in (("accuracy_vs_lambda", lam_rows, "lam"), ("accuracy_vs_tau", tau_rows, "tau")):
            series: dict[str, tuple[list, list]] = {}
            for r in data:
                xs, ys = series.setdefault(r["scenario"], ([], []))
                xs.append(r[key])
                ys.append(r["mean_accuracy"])
            if series:
                _plot(run_dir / f"{name}.svg", series, key, "online accuracy")
        if kl_rows:
            kl_series: dict[str, dict[int, list[float]]] = {}
            for r in kl_rows:
                kl_series.setdefault(f"{scenario_family(r['scenario'])} {r['method']}", {}) \
                    .setdefault(r["probed_step"], []).append(r["kl"])
            series = {k: (sorted(v), [float(np.mean(v[s])) for s in sorted(v)]) for k, v in kl_series.items()}
            _plot(run_dir / "kl_vs_step.svg", series, "probed step", "mean probe KL")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, threads=False):
        p.add_argument("--config", type=str, default=None, help="JSON run config")
        p.add_argument("--out", type=str, default=None, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="run a single seed")
        if threads:
            p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("verify", help="bound, degeneration and invariance suites")
    p.add_argument("--suite", action="append", choices=verify.VERIFY_SUITES)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--suite", action="append", choices=verify.GRAD_SUITES)
    p.add_argument("--samples", type=int, default=None, help="instances per suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("pretrain", help="train the source model and save a checkpoint")
    common(p, seed=False)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", help="execute the (scenario x method x seed) grid")
    common(p, threads=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="closed form vs MC timing and step counters")
    common(p)
    p.add_argument("--samples", type=int, default=None, help="timing repeats (>= 10)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("probe", help="consistency trajectory of one run")
    common(p)
    p.add_argument("--scenario", default="label_shift-rotate")
    p.add_argument("--method", default="recap")
    p.add_argument("--last", type=int, default=None, help="probe only the final steps")
    p.add_argument("--zero-region", action="store_true", help="probe with sigma_diag = 0")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("report", help="summary tables and SVG plots from a run directory")
    p.add_argument("--out", type=str, default=None, help="run directory to report on")
    p.add_argument("--window", type=int, default=50, help="KL smoothing window (probed steps)")
    p.add_argument("--no-plots", dest="plots", action="store_false")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
