"""Executable inequality, invariance and gradient suites.

Each suite draws random instances from a seeded generator, checks one family
of properties and returns a :class:`SuiteResult` carrying the offending
instances so they can be replayed. The closed-form functions under test are
injectable, which lets mutation tests confirm that a suite can fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import oracle, region as rg
from .model import TinyBackbone, backward_norm_affine, forward_batch
from .numerics import central_diff_grad, make_rng, softmax
from .region import AffineHead, RecapHyper, RegionSpec

MC_SAMPLES = 20_000
TAUS = (0.5, 1.2, 2.5)
TAU_GRID = (0.1, 0.5, 1.0, 1.2, 2.5)
GRAD_RTOL = 1e-5
FD_STEP = 1e-5


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    total: int = 0
    failures: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.total > 0 and self.passed == self.total

    def check(self, cond: bool, **instance) -> None:
        self.total += 1
        if cond:
            self.passed += 1
        elif len(self.failures) < 20:
            self.failures.append(_jsonable(instance))

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name:<28s} {self.passed}/{self.total}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, RegionSpec):
        return {"sigma_diag": obj.sigma_diag.tolist(), "tau": obj.tau}
    if isinstance(obj, AffineHead):
        return {"A": obj.A.tolist(), "b": obj.b.tolist()}
    return obj


@dataclass
class Instance:
    head: AffineHead
    region: RegionSpec
    z: np.ndarray


def random_instance(rng: np.random.Generator, zero_sigma: bool = False) -> Instance:
    """C in 2..10, d in 2..16, A, b, z ~ N(0, 1), sigma ~ |N(0, 1)|, tau in {0.5, 1.2, 2.5}."""
    C = int(rng.integers(2, 11))
    d = int(rng.integers(2, 17))
    head = AffineHead(rng.standard_normal((C, d)), rng.standard_normal(C))
    sigma = np.zeros(d) if zero_sigma else np.abs(rng.standard_normal(d))
    tau = float(rng.choice(TAUS))
    return Instance(head, RegionSpec(sigma, tau), rng.standard_normal(d))


def suite_lemma1(n_sets: int = 1000, seed: int = 1) -> SuiteResult:
    res = SuiteResult("lemma1_finite_sample")
    rng = make_rng(seed)
    for _ in range(n_sets):
        inst = random_instance(rng)
        N = int(rng.integers(1, 65))
        feats = inst.z + rng.standard_normal((N, inst.head.dim)) * np.sqrt(inst.region.cov_diag)
        lhs, rhs = oracle.lemma1_sides(feats, inst.head)
        res.check(lhs <= rhs + 1e-9, lhs=lhs, rhs=rhs, N=N, head=inst.head, features=feats)
    return res


def suite_lemma2(n_instances: int = 200, n_mc: int = MC_SAMPLES, seed: int = 2) -> list[SuiteResult]:
    dom = SuiteResult("lemma2_nll_bound")
    deg = SuiteResult("lemma2_zero_sigma_equality")
    rng = make_rng(seed)
    seeds = np.random.SeedSequence(seed).spawn(2 * n_instances)
    for k in range(n_instances):
        inst = random_instance(rng)
        ci = int(rng.integers(1, inst.head.n_classes + 1))
        mc, closed = oracle.lemma2_sides(seeds[k], inst.z, inst.head, inst.region, ci, n_mc)
        dom.check(mc.mean <= closed + 3 * mc.stderr, mc_mean=mc.mean, stderr=mc.stderr, closed=closed,
                  class_i=ci, head=inst.head, region=inst.region, z=inst.z)
        zero = RegionSpec(np.zeros(inst.head.dim), inst.region.tau)
        mc0, closed0 = oracle.lemma2_sides(seeds[n_instances + k], inst.z, inst.head, zero, ci, 2)
        exact = -math.log(softmax(inst.head.logits(inst.z))[ci - 1])
        deg.check(abs(mc0.mean - closed0) <= 1e-10 and abs(closed0 - exact) <= 1e-10,
                  mc_mean=mc0.mean, closed=closed0, exact=exact, class_i=ci, head=inst.head, z=inst.z)
    return [dom, deg]


def suite_prop1(n_instances: int = 200, n_degenerate: int = 1000, n_mc: int = MC_SAMPLES, seed: int = 3,
                regional_entropy: Callable = rg.regional_entropy) -> list[SuiteResult]:
    dom = SuiteResult("prop1_regional_entropy_bound")
    deg = SuiteResult("prop1_zero_sigma_degeneration")
    rng = make_rng(seed)
    seeds = np.random.SeedSequence(seed).spawn(n_instances)
    for k in range(n_instances):
        inst = random_instance(rng)
        mc = oracle.mc_bias_term(seeds[k], inst.z, inst.head, inst.region, n_mc)
        l_re = regional_entropy(inst.z, inst.head, inst.region)
        dom.check(mc.mean <= l_re + 3 * mc.stderr, mc_mean=mc.mean, stderr=mc.stderr, l_re=l_re,
                  head=inst.head, region=inst.region, z=inst.z)
    for _ in range(n_degenerate):
        inst = random_instance(rng, zero_sigma=True)
        ent = rg.entropy_loss(softmax(inst.head.logits(inst.z)))
        l_re = regional_entropy(inst.z, inst.head, inst.region)
        deg.check(abs(l_re - ent) <= 1e-10, l_re=l_re, entropy=ent, head=inst.head, z=inst.z)
    return [dom, deg]


def suite_prop2(n_instances: int = 200, n_mc: int = MC_SAMPLES, seed: int = 4,
                regional_instability: Callable = rg.regional_instability) -> list[SuiteResult]:
    dom = SuiteResult("prop2_regional_instability_bound")
    deg = SuiteResult("prop2_zero_sigma_vanishes")
    mono = SuiteResult("prop2_monotone_in_tau")
    rng = make_rng(seed)
    seeds = np.random.SeedSequence(seed).spawn(n_instances)
    for k in range(n_instances):
        inst = random_instance(rng)
        mc = oracle.mc_variance_term(seeds[k], inst.z, inst.head, inst.region, n_mc)
        l_ri = regional_instability(inst.z, inst.head, inst.region)
        dom.check(mc.mean <= l_ri + 3 * mc.stderr, mc_mean=mc.mean, stderr=mc.stderr, l_ri=l_ri,
                  head=inst.head, region=inst.region, z=inst.z)
        zero = RegionSpec(np.zeros(inst.head.dim), inst.region.tau)
        l0 = regional_instability(inst.z, inst.head, zero)
        deg.check(abs(l0) <= 1e-12, l_ri=l0, head=inst.head, z=inst.z)
        vals = [regional_instability(inst.z, inst.head, inst.region.with_tau(t)) for t in TAU_GRID]
        mono.check(all(b >= a for a, b in zip(vals, vals[1:])), values=vals, head=inst.head,
                   region=inst.region, z=inst.z)
    return [dom, deg, mono]


def suite_invariance(n_instances: int = 200, seed: int = 5,
                     regional_entropy: Callable = rg.regional_entropy,
                     regional_instability: Callable = rg.regional_instability) -> list[SuiteResult]:
    shift = SuiteResult("bias_shift_invariance")
    nonneg = SuiteResult("proxy_nonnegativity")
    coupling = SuiteResult("selection_weight_coupling")
    rng = make_rng(seed)
    for _ in range(n_instances):
        inst = random_instance(rng)
        c = float(rng.uniform(-100, 100))
        h2 = AffineHead(inst.head.A, inst.head.b + c)
        p1, p2 = softmax(inst.head.logits(inst.z)), softmax(h2.logits(inst.z))
        re1, re2 = regional_entropy(inst.z, inst.head, inst.region), regional_entropy(inst.z, h2, inst.region)
        ri1, ri2 = (regional_instability(inst.z, inst.head, inst.region),
                    regional_instability(inst.z, h2, inst.region))
        shift.check(np.max(np.abs(p1 - p2)) <= 1e-12 and abs(re1 - re2) <= 1e-12 and abs(ri1 - ri2) <= 1e-12,
                    shift=c, dp=float(np.max(np.abs(p1 - p2))), dre=re1 - re2, dri=ri1 - ri2,
                    head=inst.head, region=inst.region, z=inst.z)
        nonneg.check(re1 >= 0 and ri1 >= 0, l_re=re1, l_ri=ri1)
        # Batch of features around z; thresholds chosen so both outcomes occur.
        Z = inst.z + rng.standard_normal((16, inst.head.dim))
        l_re = rg.regional_entropy(Z, inst.head, inst.region)
        hyper = RecapHyper(lam=0.5, tau_re=float(np.median(l_re)) + 1e-9, l0=float(l_re[0]))
        out = rg.recap_objective(Z, inst.head, inst.region, hyper)
        order = np.argsort(out.l_re)
        dl, dw = np.diff(out.l_re[order]), np.diff(out.weight[order])
        ok = (np.array_equal(out.selected, out.l_re < hyper.tau_re)
              and abs(out.weight[0] - 1.0) <= 1e-12
              and np.all(dw[dl > 0] < 0) and np.all(dw[dl == 0] == 0))
        sel = out.selected
        expect = (np.sum(out.weight[sel] * (out.l_re[sel] + hyper.lam * out.l_ri[sel])) / max(1, sel.sum()))
        coupling.check(ok and abs(out.loss - expect) <= 1e-12 * max(1.0, abs(expect)),
                       l_re=out.l_re, selected=out.selected, weight=out.weight, tau_re=hyper.tau_re)
    return [shift, nonneg, coupling]


def rel_err(g: np.ndarray, fd: np.ndarray) -> float:
    """Max-abs deviation scaled by the analytic gradient's l2 norm (+1e-8)."""
    return float(np.max(np.abs(g - fd)) / (np.linalg.norm(g) + 1e-8))


def suite_grad_z(n_instances: int = 100, seed: int = 6, lam: float = 0.5,
                 grad_fn: Callable = rg.grad_z_objective) -> SuiteResult:
    res = SuiteResult("grad_z_objective_vs_fd")
    rng = make_rng(seed)
    for _ in range(n_instances):
        inst = random_instance(rng)

        def f(z, inst=inst):
            return (rg.regional_entropy(z, inst.head, inst.region)
                    + lam * rg.regional_instability(z, inst.head, inst.region))

        g = grad_fn(inst.z, inst.head, inst.region, lam)
        fd = central_diff_grad(f, inst.z, FD_STEP)
        err = rel_err(g, fd)
        res.check(err <= GRAD_RTOL, rel_err=err, head=inst.head, region=inst.region, z=inst.z)
    return res


def random_pipeline(rng: np.random.Generator):
    """Small backbone/head/region/batch configuration for end-to-end checks."""
    D, H, d, C = (int(rng.integers(3, 9)), int(rng.integers(4, 13)), int(rng.integers(3, 9)),
                  int(rng.integers(2, 7)))
    bb = TinyBackbone(W1=rng.standard_normal((H, D)) / np.sqrt(D), c1=0.1 * rng.standard_normal(H),
                      gamma=1.0 + 0.3 * rng.standard_normal(d), beta=0.3 * rng.standard_normal(d),
                      W2=rng.standard_normal((d, H)) / np.sqrt(H), c2=0.1 * rng.standard_normal(d))
    head = AffineHead(rng.standard_normal((C, d)), rng.standard_normal(C))
    region = RegionSpec(np.abs(rng.standard_normal(d)), float(rng.choice(TAUS)))
    X = rng.standard_normal((int(rng.integers(1, 6)), D))
    return bb, head, region, X


def suite_end_to_end(n_configs: int = 50, seed: int = 7, lam: float = 0.5,
                     grad_fn: Callable = rg.grad_z_objective) -> SuiteResult:
    """d(objective)/d(gamma, beta) through the backbone vs central differences.

    The per-sample objective ``L_RE + lam * L_RI`` is averaged over the batch
    (all samples selected, unit weights), matching the stop-gradient contract.
    """
    res = SuiteResult("end_to_end_gamma_beta_vs_fd")
    rng = make_rng(seed)
    for _ in range(n_configs):
        bb, head, region, X = random_pipeline(rng)
        d = bb.feat_dim
        n = X.shape[0]

        def loss(theta, bb=bb, head=head, region=region, X=X):
            b2 = bb.copy()
            b2.gamma, b2.beta = theta[:d], theta[d:]
            z = forward_batch(X, b2, head).z
            return float(np.mean(rg.regional_entropy(z, head, region)
                                 + lam * rg.regional_instability(z, head, region)))

        cache = forward_batch(X, bb, head)
        dz = grad_fn(cache.z, head, region, lam) / n
        g_gamma, g_beta = backward_norm_affine(cache, bb, dz)
        g = np.concatenate([g_gamma, g_beta])
        fd = central_diff_grad(loss, np.concatenate([bb.gamma, bb.beta]), FD_STEP)
        err = rel_err(g, fd)
        res.check(err <= GRAD_RTOL, rel_err=err)
    return res


VERIFY_SUITES = ("lemma1", "lemma2", "prop1", "prop2", "invariance")
GRAD_SUITES = ("grad_z", "end_to_end")


def run_verify(suites=VERIFY_SUITES) -> list[SuiteResult]:
    runners = {
        "lemma1": lambda: [suite_lemma1()],
        "lemma2": suite_lemma2,
        "prop1": suite_prop1,
        "prop2": suite_prop2,
        "invariance": suite_invariance,
    }
    out: list[SuiteResult] = []
    for name in suites:
        if name not in runners:
            raise ValueError(f"unknown suite {name!r}; choose from {VERIFY_SUITES}")
        out.extend(runners[name]())
    return out


def run_gradcheck(samples: int | None = None, suites=GRAD_SUITES) -> list[SuiteResult]:
    out = []
    for name in suites:
        if name == "grad_z":
            out.append(suite_grad_z(samples or 100))
        elif name == "end_to_end":
            out.append(suite_end_to_end(samples or 50))
        else:
            raise ValueError(f"unknown gradient suite {name!r}; choose from {GRAD_SUITES}")
    return out
