import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from recap.numerics import (central_diff_grad, check_prob_vector, log_softmax_rows, log_sum_exp, lse_rows,
                            make_rng, sample_diag_gaussian, softmax, softmax_rows, split_seed)

mpmath.mp.dps = 50

finite_vectors = arrays(np.float64, st.integers(1, 12),
                        elements=st.floats(-500, 500, allow_nan=False, allow_infinity=False))


def mp_lse(v):
    return float(mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(x)) for x in v)))


def mp_softmax(v):
    den = mpmath.fsum(mpmath.exp(mpmath.mpf(x)) for x in v)
    return np.array([float(mpmath.exp(mpmath.mpf(x)) / den) for x in v])


def test_lse_two_zeros():
    assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)


def test_lse_large_values_no_overflow():
    assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), abs=1e-12)


def test_lse_matches_extended_precision():
    v = [0.3, -1.2, 2.0]
    assert log_sum_exp(v) == pytest.approx(mp_lse(v), rel=1e-15)


@pytest.mark.parametrize("bad", [[], [np.nan, 1.0], [np.inf], [[1.0, 2.0]]])
def test_lse_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        log_sum_exp(bad)


@settings(max_examples=200, deadline=None)
@given(finite_vectors)
def test_lse_bounds(v):
    out = log_sum_exp(v)
    assert v.max() - 1e-12 <= out <= v.max() + math.log(v.size) + 1e-12


@settings(max_examples=100, deadline=None)
@given(finite_vectors)
def test_lse_against_mpmath(v):
    assert log_sum_exp(v) == pytest.approx(mp_lse(v), rel=1e-13, abs=1e-13)


def test_softmax_uniform():
    np.testing.assert_allclose(softmax([0, 0, 0, 0]), [0.25] * 4, rtol=0, atol=1e-16)


def test_softmax_against_mpmath():
    np.testing.assert_allclose(softmax([1.0, 2.0, 3.0]), mp_softmax([1, 2, 3]), rtol=1e-14)


@settings(max_examples=200, deadline=None)
@given(finite_vectors, st.floats(-1e3, 1e3))
def test_softmax_shift_invariance(v, c):
    p = softmax(v)
    check_prob_vector(p)
    np.testing.assert_allclose(softmax(v + c), p, atol=1e-12)


def test_row_kernels_agree_with_vector_kernels():
    rng = make_rng(0)
    X = rng.normal(size=(7, 5)) * 30
    np.testing.assert_allclose(lse_rows(X), [log_sum_exp(r) for r in X], rtol=1e-14)
    np.testing.assert_allclose(softmax_rows(X), np.stack([softmax(r) for r in X]), atol=1e-15)
    np.testing.assert_allclose(np.exp(log_softmax_rows(X)), softmax_rows(X), atol=1e-15)
    np.testing.assert_allclose(lse_rows(X, axis=0), [log_sum_exp(c) for c in X.T], rtol=1e-14)


def test_check_prob_vector():
    check_prob_vector([0.5, 0.5])
    for bad in ([0.5, 0.6], [-0.1, 1.1], [np.nan, 1.0], []):
        with pytest.raises(ValueError):
            check_prob_vector(bad)


def test_gaussian_degenerate_rows_equal_mean():
    mean = np.array([1.5, -2.0, 0.25])
    X = sample_diag_gaussian(3, mean, np.zeros(3), 50)
    assert X.shape == (50, 3)
    assert np.all(X == mean)


def test_gaussian_law_of_large_numbers():
    n = 100_000
    X = sample_diag_gaussian(11, np.zeros(4), np.ones(4), n)
    assert np.all(np.abs(X.mean(axis=0)) < 4 / math.sqrt(n))
    np.testing.assert_allclose(X.var(axis=0), 1.0, rtol=0.05)


def test_gaussian_determinism_and_negative_variance():
    a = sample_diag_gaussian(5, np.zeros(3), np.ones(3), 10)
    b = sample_diag_gaussian(5, np.zeros(3), np.ones(3), 10)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sample_diag_gaussian(6, np.zeros(3), np.ones(3), 10))
    with pytest.raises(ValueError):
        sample_diag_gaussian(5, np.zeros(2), np.array([1.0, -1e-3]), 3)


def test_split_seed_streams_are_independent_and_stable():
    a = [make_rng(s).integers(0, 2**32, 4) for s in split_seed(9, 3)]
    b = [make_rng(s).integers(0, 2**32, 4) for s in split_seed(9, 3)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a[0], a[1])


def test_central_diff_quadratic():
    g = central_diff_grad(lambda x: float(np.sum(x ** 2)), np.array([1.0, 2.0]), h=1e-5)
    np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-6)


def test_central_diff_constant():
    np.testing.assert_allclose(central_diff_grad(lambda x: 3.0, np.ones(5)), 0.0, atol=1e-10)


def test_central_diff_softmax_entropy():
    rng = make_rng(2)
    l = rng.normal(size=6)

    def ent(v):
        p = softmax(v)
        return float(-np.sum(p * np.log(p)))

    p = softmax(l)
    H = ent(l)
    analytic = -p * (np.log(p) + H)
    g = central_diff_grad(ent, l)
    assert np.max(np.abs(g - analytic)) / np.linalg.norm(analytic) < 1e-5


def test_central_diff_non_finite():
    with pytest.raises(FloatingPointError):
        central_diff_grad(lambda x: float("nan"), np.ones(2))
