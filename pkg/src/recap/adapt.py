"""Online predict-then-adapt engine, consistency probes and cost benchmark.

Every batch is scored before the update it triggers. Methods:

* ``none``: frozen source model;
* ``entropy``: entropy minimisation on every sample;
* ``entropy_select``: keep samples with entropy below ``tau_re`` and weight
  them by ``exp(l0 - entropy)``;
* ``recap``: the selected, weighted regional-entropy + instability objective.

Only the normalisation affine parameters move. Argmax ties resolve to the
lowest class index (numpy's convention).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import ADAPT_LR, MOMENTUM, NORM_EPS, TinyBackbone
from .numerics import log_softmax_rows, make_rng
from .region import (AffineHead, RecapHyper, RegionSpec, entropy_from_logits, recap_from_logits,
                     region_geometry, regional_terms)
from .stream import Batch

METHOD_KINDS = ("none", "entropy", "entropy_select", "recap")
PARAM_NORM_LIMIT = 1e6
PROBE_SAMPLES = 128


@dataclass(frozen=True)
class MethodConfig:
    kind: str = "recap"
    hyper: RecapHyper = field(default_factory=RecapHyper)
    lr: float = ADAPT_LR
    momentum: float = MOMENTUM

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method {self.kind!r}; expected one of {METHOD_KINDS}")


@dataclass
class MetricsLog:
    """Per-sample and per-batch records of one online run."""

    pred: np.ndarray
    true: np.ndarray
    domain: np.ndarray
    batch: np.ndarray
    l_re: np.ndarray
    entropy: np.ndarray
    selected: np.ndarray
    alpha: np.ndarray
    probe_inconsistent: np.ndarray
    probe_kl: np.ndarray
    batch_loss: np.ndarray
    batch_forwards: np.ndarray
    batch_backwards: np.ndarray
    batch_ns: np.ndarray
    collapse: dict | None = None

    TIMING_FIELDS = ("batch_ns",)

    @property
    def n_steps(self) -> int:
        return self.pred.size

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.pred == self.true)) if self.n_steps else float("nan")

    def domain_accuracy(self) -> dict[int, float]:
        return {int(d): float(np.mean(self.pred[self.domain == d] == self.true[self.domain == d]))
                for d in np.unique(self.domain)}

    def tail_probe_kl(self, last: int = 1000) -> float:
        return float(np.nanmean(self.probe_kl[-last:]))

    def summary(self) -> dict:
        return {
            "steps": self.n_steps,
            "accuracy": self.accuracy,
            "domain_accuracy": {str(k): v for k, v in self.domain_accuracy().items()},
            "forwards": int(self.batch_forwards.sum()),
            "backwards": int(self.batch_backwards.sum()),
            "selected_fraction": float(np.mean(self.selected)) if self.n_steps else 0.0,
            "mean_probe_kl": float(np.nanmean(self.probe_kl)) if np.any(np.isfinite(self.probe_kl)) else None,
            "mean_probe_inconsistent": (float(np.nanmean(self.probe_inconsistent))
                                        if np.any(np.isfinite(self.probe_inconsistent)) else None),
            "tail_probe_kl": self.tail_probe_kl() if np.any(np.isfinite(self.probe_kl)) else None,
            "collapse": self.collapse,
        }

    def same_as(self, other: "MetricsLog") -> bool:
        """Field-wise equality ignoring wall-clock columns."""
        for name in self.__dataclass_fields__:
            if name in self.TIMING_FIELDS:
                continue
            a, b = getattr(self, name), getattr(other, name)
            if isinstance(a, np.ndarray):
                if not np.array_equal(a, b, equal_nan=a.dtype.kind == "f"):
                    return False
            elif a != b:
                return False
        return True


def _probe_batch(head: AffineHead, Z: np.ndarray, region: RegionSpec, n: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    S = region.cov_diag
    lp0 = log_softmax_rows(head.logits(Z))
    zt = Z[:, None, :] + rng.standard_normal((Z.shape[0], n, Z.shape[1])) * np.sqrt(S)
    lp = log_softmax_rows(head.logits(zt))
    flips = np.mean(np.argmax(lp, axis=-1) != np.argmax(lp0, axis=-1)[:, None], axis=1)
    kl = np.sum(np.exp(lp0)[:, None, :] * (lp0[:, None, :] - lp), axis=-1)
    return flips, np.maximum(kl, 0.0).mean(axis=1)


def consistency_probe(head: AffineHead, z, region: RegionSpec, n: int = PROBE_SAMPLES,
                      seed=0) -> tuple[float, float]:
    """Fraction of ``n`` region neighbours whose argmax differs from ``z``'s, and mean KL."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size != head.dim:
        raise ValueError("z must be a single feature vector matching the head")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    flips, kl = _probe_batch(head, z[None, :], region, n, rng)
    return float(flips[0]), float(kl[0])


def method_loss(kind: str, logits: np.ndarray, head: AffineHead, hyper: RecapHyper, geometry=None):
    """Per-batch method loss from the batch logits.

    Returns ``(loss, dL/dz, selected, alpha)``; ``dL/dz`` is ``None`` when no
    sample contributes. ``geometry`` is the cached region geometry (recap only).
    """
    B = logits.shape[0]
    if kind == "none":
        return 0.0, None, np.zeros(B, dtype=bool), np.ones(B)
    if kind == "recap":
        if geometry is None:
            raise ValueError("recap needs a RegionSpec")
        out = recap_from_logits(logits, geometry[0], geometry[1], hyper, head.A, with_grad=True)
        return out.loss, (out.grad_z if out.n_selected else None), out.selected, out.weight
    H, gH = entropy_from_logits(logits)
    if kind == "entropy":
        return float(H.mean()), (gH / B) @ head.A, np.ones(B, dtype=bool), np.ones(B)
    sel = H < hyper.tau_re
    alpha = np.exp(hyper.l0 - H)
    n_sel = int(sel.sum())
    if n_sel == 0:
        return 0.0, None, sel, alpha
    coef = np.where(sel, alpha, 0.0) / n_sel
    return float(np.sum(coef * H)), (coef[:, None] * gH) @ head.A, sel, alpha


def run_stream(backbone: TinyBackbone, head: AffineHead, stream: list[Batch],
               method: MethodConfig, region: RegionSpec | None = None,
               probe_n: int = 0, probe_seed: int = 0,
               probe_last: int | None = None) -> tuple[MetricsLog, TinyBackbone]:
    """Run one online adaptation pass; the caller's backbone is not mutated.

    Returns the metrics and the adapted backbone. Adaptation sees only
    ``batch.x``; labels and domain ids are read after the prediction is fixed.
    A non-finite loss or a parameter norm above ``PARAM_NORM_LIMIT`` stops the
    run and is recorded in ``collapse``. Logged proxies, entropies and probes
    are evaluated afterwards from the stored prediction-time features; they
    never feed back into adaptation. ``probe_last`` limits probes to the final
    steps of the stream (unprobed steps log NaN).
    """
    if method.kind == "recap" and region is None:
        raise ValueError("method 'recap' requires a region estimated from source features")
    if probe_n and region is None:
        raise ValueError("consistency probes need a region")
    model = backbone.copy()
    geometry = region_geometry(head, region) if region is not None else None
    gamma, beta = model.gamma.copy(), model.beta.copy()
    v_gamma, v_beta = np.zeros_like(gamma), np.zeros_like(beta)
    lr, mom = method.lr, method.momentum
    W1T, c1, W2T, c2 = model.W1.T.copy(), model.c1, model.W2.T.copy(), model.c2
    AT, b = head.A.T.copy(), head.b
    T = sum(batch.x.shape[0] for batch in stream)
    nb = len(stream)
    feats = np.zeros((T, head.dim))
    pred = np.zeros(T, dtype=np.int64)
    selected = np.zeros(T, dtype=bool)
    alpha = np.full(T, np.nan)
    loss_hist = np.full(nb, np.nan)
    fwd = np.zeros(nb, dtype=np.int64)
    bwd = np.zeros(nb, dtype=np.int64)
    ns = np.zeros(nb, dtype=np.int64)
    collapse = None
    pos = 0
    done = 0
    adapting = method.kind != "none"
    for k, batch in enumerate(stream):
        t0 = time.perf_counter_ns()
        x = batch.x
        u = np.tanh(x @ W1T + c1) @ W2T + c2
        u = u - u.mean(axis=1, keepdims=True)
        normed = u / np.sqrt(np.mean(u * u, axis=1, keepdims=True) + NORM_EPS)
        z = gamma * normed + beta
        logits = z @ AT + b
        fwd[k] = 1
        n = x.shape[0]
        sl = slice(pos, pos + n)
        pred[sl] = np.argmax(logits, axis=1)
        feats[sl] = z
        if adapting:
            loss, dz, sel, al = method_loss(method.kind, logits, head, method.hyper, geometry)
            selected[sl] = sel
            alpha[sl] = al
            loss_hist[k] = loss
            if dz is not None:
                if not (np.isfinite(loss) and np.all(np.isfinite(dz))):
                    collapse = {"step": pos, "batch": k, "reason": "non-finite loss",
                                "gamma_norm": float(np.linalg.norm(gamma)),
                                "beta_norm": float(np.linalg.norm(beta))}
                else:
                    v_gamma = mom * v_gamma + np.sum(dz * normed, axis=0)
                    v_beta = mom * v_beta + np.sum(dz, axis=0)
                    gamma = gamma - lr * v_gamma
                    beta = beta - lr * v_beta
                    bwd[k] = 1
                    gn, bn = float(np.linalg.norm(gamma)), float(np.linalg.norm(beta))
                    if max(gn, bn) > PARAM_NORM_LIMIT:
                        collapse = {"step": pos, "batch": k, "reason": "parameter norm limit",
                                    "gamma_norm": gn, "beta_norm": bn}
        else:
            loss_hist[k] = 0.0
            alpha[sl] = 1.0
        ns[k] = time.perf_counter_ns() - t0
        pos += n
        done = k + 1
        if collapse is not None:
            break
    model.gamma, model.beta = gamma, beta
    Z = feats[:pos]
    logits_all = Z @ AT + b
    entropy = entropy_from_logits(logits_all)[0] if pos else np.zeros(0)
    l_re = regional_terms(Z, head, region, geometry)[0] if (region is not None and pos) else np.full(pos, np.nan)
    incons = np.full(pos, np.nan)
    kl = np.full(pos, np.nan)
    if probe_n and pos:
        rng = make_rng(np.random.SeedSequence([probe_seed, 0x9B0BE]))
        first = 0 if probe_last is None else max(0, pos - probe_last)
        for s0 in range(first, pos, 256):
            incons[s0:s0 + 256], kl[s0:s0 + 256] = _probe_batch(head, Z[s0:s0 + 256], region, probe_n, rng)
    labels = np.concatenate([bt.y for bt in stream[:done]]) if done else np.zeros(0, dtype=np.int64)
    doms = np.concatenate([bt.domain for bt in stream[:done]]) if done else np.zeros(0, dtype=np.int64)
    bidx = np.repeat(np.arange(done), [bt.x.shape[0] for bt in stream[:done]])
    log = MetricsLog(pred[:pos], labels.astype(np.int64), doms.astype(np.int64), bidx, l_re, entropy,
                     selected[:pos], alpha[:pos], incons, kl, loss_hist[:done], fwd[:done], bwd[:done],
                     ns[:done], collapse)
    return log, model


def _mc_proxy(head: AffineHead, Z: np.ndarray, region: RegionSpec, n_mc: int,
              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    S = region.cov_diag
    lp0 = log_softmax_rows(head.logits(Z))
    zt = Z[:, None, :] + rng.standard_normal((Z.shape[0], n_mc, Z.shape[1])) * np.sqrt(S)
    lp = log_softmax_rows(head.logits(zt))
    ent = -np.sum(np.exp(lp) * lp, axis=-1).mean(axis=1)
    kl = np.sum(np.exp(lp0)[:, None, :] * (lp0[:, None, :] - lp), axis=-1).mean(axis=1)
    return ent, kl


@dataclass
class BenchReport:
    closed_ns: float
    mc_ns: float
    n_mc: int
    batch: int
    repeats: int
    counters: list[dict] = field(default_factory=list)

    @property
    def speedup(self) -> float:
        return self.mc_ns / self.closed_ns


def bench_proxy_vs_mc(head: AffineHead, region: RegionSpec, batch: np.ndarray, n_mc: int = 128,
                      repeats: int = 50, seed: int = 0) -> BenchReport:
    """Median wall time of the closed-form proxies vs. an ``n_mc``-sample MC estimate."""
    if repeats < 10:
        raise ValueError("repeats must be >= 10")
    Z = np.asarray(batch, dtype=np.float64)
    rng = make_rng(seed)
    closed, mc = [], []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        regional_terms(Z, head, region)
        t1 = time.perf_counter_ns()
        _mc_proxy(head, Z, region, n_mc, rng)
        t2 = time.perf_counter_ns()
        closed.append(t1 - t0)
        mc.append(t2 - t1)
    return BenchReport(float(np.median(closed)), float(np.median(mc)), n_mc, Z.shape[0], repeats)


def step_counters(backbone: TinyBackbone, head: AffineHead, stream: list[Batch],
                  region: RegionSpec, hyper: RecapHyper, lr: float = ADAPT_LR) -> list[dict]:
    """Forward/backward counts per adaptation step and median step time for each method."""
    rows = []
    for kind in METHOD_KINDS:
        log, _ = run_stream(backbone, head, stream, MethodConfig(kind, hyper, lr), region)
        steps = max(1, log.batch_forwards.size)
        rows.append({
            "method": kind,
            "forwards": int(log.batch_forwards.sum()),
            "backwards": int(log.batch_backwards.sum()),
            "steps": steps,
            "forwards_per_step": log.batch_forwards.sum() / steps,
            "backwards_per_step": log.batch_backwards.sum() / steps,
            "median_step_ns": float(np.median(log.batch_ns)) if log.batch_ns.size else 0.0,
        })
    return rows
