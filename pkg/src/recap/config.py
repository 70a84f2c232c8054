"""Run configuration: a JSON document with a fixed, versioned schema.

Unknown keys are errors; every error names the offending key path, e.g.
``scenarios[1].domains[0].severty``. Example::

    {
      "schema_version": 1,
      "task": {"n_classes": 10, "in_dim": 32, "proto_scale": 0.7, "noise": 1.0,
               "seed": 0, "n_source": 5000},
      "model": {"hidden": 128, "feat_dim": 128, "epochs": 20, "lr": 0.01,
                "weight_decay": 0.03, "seed": 0, "checkpoint": null},
      "region": {"tau": 1.2, "n_source_features": 500},
      "methods": [{"kind": "recap", "lambda": 0.5}, {"kind": "entropy"}],
      "scenarios": [{"name": "bs1", "batch_size": 1, "length": 10000,
                     "domains": [{"kind": "rotate", "severity": 5, "weight": 1.0}],
                     "label_schedule": "iid"}],
      "seeds": [1, 2, 3, 4, 5],
      "probe": {"n": 128, "last": 1000, "families": ["label_shift"]},
      "out": "runs/default"
    }

``label_schedule`` is ``"iid"`` or ``{"imbalanced": rho}`` with ``rho`` a
number >= 1 or the string ``"inf"``. Consistency probes run only on scenarios
whose family is listed in ``probe.families`` and only over the final
``probe.last`` steps (``null`` probes the whole stream).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .region import DEFAULT_LAMBDA, DEFAULT_TAU, RecapHyper
from .stream import CORRUPTION_KINDS, Domain, StreamScenario, default_scenarios

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path or '<root>'}: {msg}")
        self.path = path


@dataclass(frozen=True)
class TaskConfig:
    n_classes: int = 10
    in_dim: int = 32
    proto_scale: float = 0.7
    noise: float = 1.0
    seed: int = 0
    n_source: int = 5000


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 128
    feat_dim: int = 128
    epochs: int = 20
    lr: float = 0.01
    weight_decay: float = 0.03
    seed: int = 0
    checkpoint: str | None = None


@dataclass(frozen=True)
class RegionConfig:
    tau: float = DEFAULT_TAU
    n_source_features: int = 500


@dataclass(frozen=True)
class MethodSpec:
    kind: str = "recap"
    name: str | None = None
    lam: float = DEFAULT_LAMBDA
    l0_frac: float = 0.7
    tau_re_frac: float = 0.8
    lr: float = 0.001
    momentum: float = 0.9
    tau: float | None = None  # per-method region scale override (ablations)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return self.kind

    def hyper(self, n_classes: int) -> RecapHyper:
        return RecapHyper.for_classes(n_classes, self.lam, self.l0_frac, self.tau_re_frac)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass(frozen=True)
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    region: RegionConfig = field(default_factory=RegionConfig)
    methods: tuple[MethodSpec, ...] = (MethodSpec("none"), MethodSpec("entropy"), MethodSpec("recap"))
    scenarios: tuple[StreamScenario, ...] = tuple(default_scenarios())
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    probe_n: int = 128
    probe_last: int | None = 1000
    probe_families: tuple[str, ...] = ("label_shift",)
    out: str = "runs/default"

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "task": asdict(self.task),
            "model": asdict(self.model),
            "region": asdict(self.region),
            "methods": [m.to_dict() for m in self.methods],
            "scenarios": [s.to_dict() for s in self.scenarios],
            "seeds": list(self.seeds),
            "probe": {"n": self.probe_n, "last": self.probe_last,
                      "families": list(self.probe_families)},
            "out": self.out,
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _obj(value, path: str, allowed: set[str]) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected an object, got {type(value).__name__}")
    for key in value:
        if key not in allowed:
            sub = f"{path}.{key}" if path else key
            raise ConfigError(sub, f"unknown key (allowed: {', '.join(sorted(allowed))})")
    return value


def _num(value, path: str, kind=float, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if kind is int and value != int(value):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    value = kind(value)
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return value


def _dataclass_section(cls, raw, path: str, casts: dict):
    raw = _obj(raw, path, set(casts))
    kwargs = {}
    for key, (kind, minimum) in casts.items():
        if key in raw:
            if raw[key] is None and kind is str:
                kwargs[key] = None
            elif kind is str:
                if not isinstance(raw[key], str):
                    raise ConfigError(f"{path}.{key}", "expected a string")
                kwargs[key] = raw[key]
            else:
                kwargs[key] = _num(raw[key], f"{path}.{key}", kind, minimum)
    return cls(**kwargs)


def _parse_method(raw, path: str) -> MethodSpec:
    keys = {"kind", "name", "lambda", "l0_frac", "tau_re_frac", "lr", "momentum", "tau"}
    raw = _obj(raw, path, keys)
    kind = raw.get("kind", "recap")
    from .adapt import METHOD_KINDS
    if kind not in METHOD_KINDS:
        raise ConfigError(f"{path}.kind", f"unknown method {kind!r} (expected one of {METHOD_KINDS})")
    kw = {"kind": kind, "name": raw.get("name")}
    for key, attr, minimum in (("lambda", "lam", 0.0), ("l0_frac", "l0_frac", 0.0),
                               ("tau_re_frac", "tau_re_frac", 0.0), ("lr", "lr", 0.0),
                               ("momentum", "momentum", 0.0)):
        if key in raw:
            kw[attr] = _num(raw[key], f"{path}.{key}", float, minimum)
    if raw.get("tau") is not None:
        kw["tau"] = _num(raw["tau"], f"{path}.tau", float, 0.0)
    return MethodSpec(**kw)


def _parse_scenario(raw, path: str) -> StreamScenario:
    raw = _obj(raw, path, {"name", "batch_size", "length", "domains", "label_schedule", "seed"})
    for key in ("batch_size", "length", "domains"):
        if key not in raw:
            raise ConfigError(f"{path}.{key}", "missing required key")
    doms = raw["domains"]
    if not isinstance(doms, list) or not doms:
        raise ConfigError(f"{path}.domains", "expected a non-empty list")
    domains = []
    for i, d in enumerate(doms):
        dp = f"{path}.domains[{i}]"
        d = _obj(d, dp, {"kind", "severity", "weight"})
        if d.get("kind") not in CORRUPTION_KINDS:
            raise ConfigError(f"{dp}.kind", f"unknown corruption {d.get('kind')!r}")
        sev = _num(d.get("severity", 5), f"{dp}.severity", int, 1)
        if sev > 5:
            raise ConfigError(f"{dp}.severity", "must be in 1..5")
        domains.append(Domain(d["kind"], sev, _num(d.get("weight", 1.0 / len(doms)), f"{dp}.weight", float, 0.0)))
    sched = raw.get("label_schedule", "iid")
    if sched == "iid":
        imbalance = None
    else:
        sp = f"{path}.label_schedule"
        sched = _obj(sched, sp, {"imbalanced"})
        rho = sched.get("imbalanced")
        if rho in ("inf", "infinity"):
            imbalance = math.inf
        else:
            imbalance = _num(rho, f"{sp}.imbalanced", float, 1.0)
    try:
        return StreamScenario(_num(raw["batch_size"], f"{path}.batch_size", int, 1),
                              _num(raw["length"], f"{path}.length", int, 1),
                              tuple(domains), imbalance,
                              _num(raw.get("seed", 0), f"{path}.seed", int, 0), str(raw.get("name", "")))
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def parse_config(raw: dict) -> RunConfig:
    raw = _obj(raw, "", {"schema_version", "task", "model", "region", "methods", "scenarios",
                         "seeds", "probe", "out"})
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version!r}")
    kw = {}
    if "task" in raw:
        kw["task"] = _dataclass_section(TaskConfig, raw["task"], "task", {
            "n_classes": (int, 2), "in_dim": (int, 1), "proto_scale": (float, 0.0),
            "noise": (float, 0.0), "seed": (int, 0), "n_source": (int, 1)})
    if "model" in raw:
        kw["model"] = _dataclass_section(ModelConfig, raw["model"], "model", {
            "hidden": (int, 1), "feat_dim": (int, 1), "epochs": (int, 1), "lr": (float, 0.0),
            "weight_decay": (float, 0.0), "seed": (int, 0), "checkpoint": (str, None)})
    if "region" in raw:
        kw["region"] = _dataclass_section(RegionConfig, raw["region"], "region", {
            "tau": (float, 0.0), "n_source_features": (int, 2)})
    if "methods" in raw:
        if not isinstance(raw["methods"], list) or not raw["methods"]:
            raise ConfigError("methods", "expected a non-empty list")
        kw["methods"] = tuple(_parse_method(m, f"methods[{i}]") for i, m in enumerate(raw["methods"]))
        labels = [m.label for m in kw["methods"]]
        if len(set(labels)) != len(labels):
            raise ConfigError("methods", "method labels must be unique; set 'name' to disambiguate")
    if "scenarios" in raw:
        if not isinstance(raw["scenarios"], list) or not raw["scenarios"]:
            raise ConfigError("scenarios", "expected a non-empty list")
        kw["scenarios"] = tuple(_parse_scenario(s, f"scenarios[{i}]") for i, s in enumerate(raw["scenarios"]))
    if "seeds" in raw:
        seeds = raw["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seeds", "expected a non-empty list of integers")
        kw["seeds"] = tuple(_num(s, f"seeds[{i}]", int, 0) for i, s in enumerate(seeds))
    if "probe" in raw:
        p = _obj(raw["probe"], "probe", {"n", "last", "families"})
        kw["probe_n"] = _num(p.get("n", 128), "probe.n", int, 0)
        if p.get("last", 1000) is None:
            kw["probe_last"] = None
        else:
            kw["probe_last"] = _num(p.get("last", 1000), "probe.last", int, 1)
        fam = p.get("families", ["label_shift"])
        if not isinstance(fam, list) or not all(isinstance(f, str) for f in fam):
            raise ConfigError("probe.families", "expected a list of strings")
        kw["probe_families"] = tuple(fam)
    if "out" in raw:
        if not isinstance(raw["out"], str):
            raise ConfigError("out", "expected a string")
        kw["out"] = raw["out"]
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    return parse_config(raw)
