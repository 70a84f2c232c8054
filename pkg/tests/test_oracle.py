import math

import mpmath
import numpy as np
import pytest

from recap.numerics import make_rng, softmax
from recap.oracle import (McEstimate, kl_divergence, lemma1_sides, lemma2_sides, mc_bias_term,
                          mc_variance_term)
from recap.region import AffineHead, RegionSpec, entropy_loss, regional_instability

mpmath.mp.dps = 40


def case(seed, C=5, d=4):
    rng = make_rng(seed)
    return (AffineHead(rng.normal(size=(C, d)), rng.normal(size=C)), RegionSpec(rng.uniform(0, 1, d)),
            rng.normal(size=d))


def test_mc_estimate_from_samples():
    est = McEstimate.from_samples(np.array([1.0, 2.0, 3.0, 4.0]))
    assert est.mean == 2.5 and est.n == 4
    assert est.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    const = McEstimate.from_samples(np.full(10, 0.3))
    assert const.mean == 0.3 and const.stderr == 0.0
    with pytest.raises(ValueError):
        McEstimate.from_samples(np.array([1.0]))


def test_kl_examples():
    assert kl_divergence([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    p, q = softmax(make_rng(1).normal(size=6)), softmax(make_rng(2).normal(size=6))
    ref = mpmath.fsum(mpmath.mpf(a) * mpmath.log(mpmath.mpf(a) / mpmath.mpf(b)) for a, b in zip(p, q))
    assert kl_divergence(p, q) == pytest.approx(float(ref), rel=1e-13)
    with pytest.raises(ValueError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])


def test_mc_terms_at_zero_sigma():
    head, _, z = case(3)
    zero = RegionSpec(np.zeros(head.dim))
    bias = mc_bias_term(0, z, head, zero, 100)
    assert bias.stderr == 0.0
    assert bias.mean == pytest.approx(entropy_loss(softmax(head.logits(z))), abs=1e-14)
    var = mc_variance_term(0, z, head, zero, 100)
    assert var.mean == 0.0 and var.stderr == 0.0


def test_mc_terms_are_reproducible():
    head, region, z = case(4)
    assert mc_bias_term(9, z, head, region, 500) == mc_bias_term(9, z, head, region, 500)
    assert mc_variance_term(9, z, head, region, 500) == mc_variance_term(9, z, head, region, 500)


def test_variance_term_dominated_by_instability():
    head, region, z = case(5)
    est = mc_variance_term(1, z, head, region, 20_000)
    assert est.mean <= regional_instability(z, head, region) + 3 * est.stderr


def test_stderr_scales_as_inverse_sqrt_n():
    head, region, z = case(6)
    ratios = [mc_variance_term(s, z, head, region, 2000).stderr / mc_variance_term(s + 100, z, head, region, 4000).stderr
              for s in range(20)]
    assert abs(np.mean(ratios) / math.sqrt(2) - 1) < 0.3


def test_lemma1_equalities():
    head, _, z = case(7, C=10, d=6)
    lhs, rhs = lemma1_sides(z[None, :], head)
    assert lhs == rhs
    lhs, rhs = lemma1_sides(np.tile(z, (5, 1)), head)
    assert lhs == pytest.approx(rhs, rel=1e-15)


def test_lemma1_inequality_on_random_features():
    head, _, _ = case(8, C=10, d=6)
    F = make_rng(9).normal(size=(64, 6)) * 2
    lhs, rhs = lemma1_sides(F, head)
    assert lhs - rhs <= 1e-9


def test_lemma2_closed_side_matches_direct_evaluation():
    head, region, mu = case(10)
    _, closed = lemma2_sides(0, mu, head, region, 2, 10)
    A, b, S = head.A, head.b, region.cov_diag
    terms = [mpmath.mpf(float((A[j] - A[1]) @ mu + b[j] - b[1] + 0.5 * np.sum((A[j] - A[1]) ** 2 * S)))
             for j in range(head.n_classes)]
    assert closed == pytest.approx(float(mpmath.log(mpmath.fsum(mpmath.exp(t) for t in terms))), rel=1e-13)


def test_lemma2_examples():
    head, region, mu = case(11)
    zero = RegionSpec(np.zeros(head.dim))
    mc, closed = lemma2_sides(0, mu, head, zero, 3, 50)
    nll = -math.log(softmax(head.logits(mu))[2])
    assert mc.mean == pytest.approx(nll, abs=1e-12) and closed == pytest.approx(nll, abs=1e-12)
    flat = AffineHead(np.zeros((6, head.dim)), np.zeros(6))
    mc, closed = lemma2_sides(0, mu, flat, region, 1, 50)
    assert mc.mean == pytest.approx(math.log(6)) and closed == pytest.approx(math.log(6))
    mc, closed = lemma2_sides(1, mu, head, region, 1, 20_000)
    assert mc.mean <= closed + 3 * mc.stderr
    with pytest.raises(ValueError):
        lemma2_sides(0, mu, head, region, 0, 10)
