"""Naive Monte-Carlo and direct-evaluation oracles for the region proxies.

These estimators deliberately avoid any shortcut shared with the closed forms
in :mod:`recap.region`: they sample features, push every sample through the
classifier head and average.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import check_prob_vector, log_softmax_rows, make_rng
from .region import AffineHead, RegionSpec, _check_region


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n: int

    @classmethod
    def from_samples(cls, values: np.ndarray) -> "McEstimate":
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        if n < 2:
            raise ValueError("need at least 2 samples")
        if np.all(values == values[0]):
            return cls(float(values[0]), 0.0, n)
        return cls(float(values.mean()), float(values.std(ddof=1) / np.sqrt(n)), n)


def kl_divergence(p, q) -> float:
    """``KL(p || q)`` in nats with the ``0 log 0 = 0`` convention."""
    p = check_prob_vector(p)
    q = check_prob_vector(q)
    if p.shape != q.shape:
        raise ValueError("p and q must have the same length")
    support = p > 0
    if np.any(q[support] <= 0):
        raise ValueError("q must be positive wherever p is positive")
    return float(max(np.sum(p[support] * np.log(p[support] / q[support])), 0.0))


def _neighbour_log_probs(seed, z, head: AffineHead, region: RegionSpec, n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("n must be >= 2")
    S = _check_region(head, region)
    z = np.asarray(z, dtype=np.float64)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    zt = z + rng.standard_normal((n, z.size)) * np.sqrt(S)
    return log_softmax_rows(head.logits(zt))


def mc_bias_term(seed, z, head: AffineHead, region: RegionSpec, n: int) -> McEstimate:
    """MC estimate of the expected prediction entropy over the region around ``z``."""
    lp = _neighbour_log_probs(seed, z, head, region, n)
    return McEstimate.from_samples(-np.sum(np.exp(lp) * lp, axis=1))


def mc_variance_term(seed, z, head: AffineHead, region: RegionSpec, n: int) -> McEstimate:
    """MC estimate of ``E[KL(p(z) || p(z~))]`` over the region around ``z``."""
    lp = _neighbour_log_probs(seed, z, head, region, n)
    lp0 = log_softmax_rows(head.logits(np.asarray(z, dtype=np.float64))[None, :])[0]
    kl = np.sum(np.exp(lp0) * (lp0 - lp), axis=1)
    return McEstimate.from_samples(np.maximum(kl, 0.0))


def lemma1_sides(features, head: AffineHead) -> tuple[float, float]:
    """Both sides of the finite-sample entropy inequality.

    ``lhs`` is the summed entropy of the ``N`` predictions; ``rhs`` replaces each
    sample's own probability weight by the batch-mean probability. ``lhs <= rhs``
    always holds.
    """
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if F.shape[0] < 1 or F.shape[1] != head.dim:
        raise ValueError("features must be an (N, d) matrix with N >= 1")
    lp = log_softmax_rows(head.logits(F))
    p = np.exp(lp)
    lhs = float(-np.sum(p * lp))
    rhs = float(-np.sum(p.mean(axis=0) * lp.sum(axis=0)))
    return lhs, rhs


def lemma2_sides(seed, mu, head: AffineHead, region: RegionSpec, class_i: int,
                 n: int) -> tuple[McEstimate, float]:
    """MC negative log-likelihood of class ``class_i`` (1-based) and its closed bound."""
    C = head.n_classes
    if not 1 <= class_i <= C:
        raise ValueError(f"class_i must be in 1..{C}")
    i = class_i - 1
    S = _check_region(head, region)
    mu = np.asarray(mu, dtype=np.float64)
    lp = _neighbour_log_probs(seed, mu, head, region, n)
    mc = McEstimate.from_samples(-lp[:, i])
    diff = head.A - head.A[i]
    expo = diff @ mu + (head.b - head.b[i]) + 0.5 * (diff ** 2) @ S
    m = expo.max()
    closed = float(m + np.log(np.sum(np.exp(expo - m))))
    return mc, closed
