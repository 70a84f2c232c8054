"""Synthetic source task, vector corruptions and wild test-stream generation.

Corruption parameter table (``s`` = severity 1..5, transforms fixed per seed):

========== ================================================================
kind       transform
========== ================================================================
add_noise  ``x + eps``, ``eps ~ N(0, (0.1 s)^2 I)`` drawn per sample
rotate     rotate every plane of a random orthonormal pairing by ``9 s`` deg
scale      per-coordinate gain ``exp(0.15 s r_k)``, ``r_k ~ N(0, 1)``
occlude    zero a random subset of ``round(0.1 s D)`` coordinates (nested)
========== ================================================================

Streams end on the last full batch; a trailing partial batch is dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .numerics import make_rng

CORRUPTION_KINDS = ("add_noise", "rotate", "scale", "occlude")
NOISE_STEP = 0.1
ROTATE_STEP_DEG = 9.0
GAIN_STEP = 0.15
OCCLUDE_STEP = 0.1


@dataclass(frozen=True)
class SyntheticTask:
    prototypes: np.ndarray  # (C, D)
    noise: float
    seed: int

    @classmethod
    def make(cls, n_classes: int = 10, in_dim: int = 32, proto_scale: float = 1.0,
             noise: float = 1.0, seed: int = 0) -> "SyntheticTask":
        rng = make_rng(np.random.SeedSequence([seed, 0xC1A55]))
        protos = proto_scale * rng.standard_normal((n_classes, in_dim))
        return cls(protos, float(noise), int(seed))

    def __post_init__(self):
        P = np.asarray(self.prototypes, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] < 2:
            raise ValueError("need at least two class prototypes")
        gaps = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
        if np.any(gaps[~np.eye(len(P), dtype=bool)] == 0):
            raise ValueError("class prototypes must be pairwise distinct")
        if self.noise < 0:
            raise ValueError("noise scale must be nonnegative")

    @property
    def n_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def in_dim(self) -> int:
        return self.prototypes.shape[1]

    def sample(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        return self.prototypes[labels] + self.noise * rng.standard_normal((labels.size, self.in_dim))


def gen_source_dataset(task: SyntheticTask, n: int, seed: int | None = None):
    """Class-balanced labelled source data ``(X, y)``, shuffled, deterministic by seed."""
    C = task.n_classes
    if n < C:
        raise ValueError(f"n={n} must be at least the number of classes {C}")
    seed = task.seed if seed is None else seed
    rng = make_rng(np.random.SeedSequence([seed, 0x50C]))
    labels = np.arange(n) % C
    labels = labels[rng.permutation(n)]
    return task.sample(labels, rng), labels


@dataclass(frozen=True)
class Corruption:
    """One (kind, severity) shift whose fixed transform is drawn from ``seed``."""

    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}; expected one of {CORRUPTION_KINDS}")
        if not 1 <= int(self.severity) <= 5:
            raise ValueError("severity must be in 1..5")

    def _rng(self) -> np.random.Generator:
        # Severity is deliberately not mixed in: transforms nest across severities.
        return make_rng(np.random.SeedSequence([self.seed, CORRUPTION_KINDS.index(self.kind)]))

    def _rotation(self, D: int) -> np.ndarray:
        Q, _ = np.linalg.qr(self._rng().standard_normal((D, D)))
        theta = math.radians(ROTATE_STEP_DEG * self.severity)
        c, s = math.cos(theta), math.sin(theta)
        B = np.eye(D)
        for k in range(0, D - 1, 2):
            B[k:k + 2, k:k + 2] = [[c, -s], [s, c]]
        return Q @ B @ Q.T

    def _gain(self, D: int) -> np.ndarray:
        return np.exp(GAIN_STEP * self.severity * self._rng().standard_normal(D))

    def _mask(self, D: int) -> np.ndarray:
        order = self._rng().permutation(D)
        keep = np.ones(D)
        keep[order[: round(OCCLUDE_STEP * self.severity * D)]] = 0.0
        return keep

    @cached_property
    def _cache(self) -> dict:
        return {}

    def _param(self, D: int) -> np.ndarray:
        key = D
        if key not in self._cache:
            maker = {"rotate": self._rotation, "scale": self._gain, "occlude": self._mask}[self.kind]
            self._cache[key] = maker(D)
        return self._cache[key]

    def apply(self, X: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "add_noise":
            if rng is None:
                raise ValueError("add_noise needs a random generator")
            return X + NOISE_STEP * self.severity * rng.standard_normal(X.shape)
        P = self._param(X.shape[-1])
        if self.kind == "rotate":
            return X @ P.T
        return X * P


def corrupt(x, kind: str, severity: int, seed: int = 0) -> np.ndarray:
    """Apply one corruption to ``x`` (vector or rows); deterministic by ``seed``."""
    corr = Corruption(kind, int(severity), seed)
    rng = make_rng(np.random.SeedSequence([seed, 0xA0, int(severity)]))
    return corr.apply(x, rng)


@dataclass(frozen=True)
class Domain:
    kind: str
    severity: int
    weight: float = 1.0


@dataclass(frozen=True)
class StreamScenario:
    """Declarative wild test stream.

    ``imbalance`` is ``None`` for an i.i.d. label schedule, otherwise the ratio
    ``rho >= 1`` (``math.inf`` for a class-sorted stream).
    """

    batch_size: int
    length: int
    domains: tuple[Domain, ...]
    imbalance: float | None = None
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.batch_size < 1 or self.length < self.batch_size:
            raise ValueError("need batch_size >= 1 and length >= batch_size")
        if not self.domains:
            raise ValueError("at least one domain is required")
        w = np.array([d.weight for d in self.domains], dtype=np.float64)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("domain weights must be nonnegative and sum to 1")
        if self.imbalance is not None and not self.imbalance >= 1:
            raise ValueError("imbalance ratio must be >= 1 (or inf)")

    @property
    def weights(self) -> np.ndarray:
        return np.array([d.weight for d in self.domains], dtype=np.float64)

    def with_seed(self, seed: int) -> "StreamScenario":
        return StreamScenario(self.batch_size, self.length, self.domains, self.imbalance, seed, self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "batch_size": self.batch_size,
            "length": self.length,
            "domains": [{"kind": d.kind, "severity": d.severity, "weight": d.weight} for d in self.domains],
            "label_schedule": ("iid" if self.imbalance is None
                               else {"imbalanced": "inf" if math.isinf(self.imbalance) else self.imbalance}),
            "seed": self.seed,
        }


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray = field(repr=False)
    domain: np.ndarray = field(repr=False)
    start: int = 0


def label_schedule(n_classes: int, length: int, imbalance: float | None,
                   rng: np.random.Generator) -> np.ndarray:
    """Labels for every stream position.

    Under imbalance ``rho`` the stream is cut into ``C`` equal segments; in
    segment ``c`` class ``c`` has probability ``rho / (rho + C - 1)``.
    """
    C = n_classes
    if imbalance is None:
        return rng.integers(0, C, size=length)
    seg = np.minimum(np.arange(length) * C // length, C - 1)
    if math.isinf(imbalance):
        return seg
    probs = np.full((C, C), 1.0 / (imbalance + C - 1))
    np.fill_diagonal(probs, imbalance / (imbalance + C - 1))
    u = rng.random(length)
    cdf = np.cumsum(probs[seg], axis=1)
    return np.minimum((u[:, None] > cdf).sum(axis=1), C - 1)


def build_stream(task: SyntheticTask, scenario: StreamScenario) -> list[Batch]:
    """Materialise the scenario into consecutive full batches."""
    label_seq, dom_seq, x_seq, noise_seq = np.random.SeedSequence([scenario.seed, 0x57]).spawn(4)
    T = scenario.length
    labels = label_schedule(task.n_classes, T, scenario.imbalance, make_rng(label_seq))
    dom = make_rng(dom_seq).choice(len(scenario.domains), size=T, p=scenario.weights)
    X = task.sample(labels, make_rng(x_seq))
    noise_rng = make_rng(noise_seq)
    for k, d in enumerate(scenario.domains):
        rows = dom == k
        if rows.any():
            X[rows] = Corruption(d.kind, d.severity, scenario.seed).apply(X[rows], noise_rng)
    B = scenario.batch_size
    return [Batch(X[s:s + B], labels[s:s + B], dom[s:s + B], s) for s in range(0, T - B + 1, B)]


def default_scenarios(length: int = 10_000, kinds=CORRUPTION_KINDS) -> list[StreamScenario]:
    """The three wild profiles.

    Single-domain profiles are families with one stream per corruption kind
    (named ``bs1-<kind>`` and ``label_shift-<kind>``); results are averaged
    over the family. ``mixed`` draws from all kinds at severities 5 and 4.
    """
    mixed = tuple(Domain(k, s, 1.0 / (2 * len(CORRUPTION_KINDS))) for k in CORRUPTION_KINDS for s in (5, 4))
    out = [StreamScenario(1, length, (Domain(k, 5, 1.0),), None, name=f"bs1-{k}") for k in kinds]
    out.append(StreamScenario(64, length, mixed, None, name="mixed"))
    out += [StreamScenario(64, length, (Domain(k, 5, 1.0),), math.inf, name=f"label_shift-{k}")
            for k in kinds]
    return out


def scenario_family(name: str) -> str:
    """``bs1-rotate`` -> ``bs1``; names without a suffix are their own family."""
    return name.split("-", 1)[0]
