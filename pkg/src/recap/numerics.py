"""Numerically stable kernels and seeded sampling shared by every module.

All arithmetic is float64. Randomness comes from numpy's PCG64 bit generator
seeded through ``SeedSequence``; Gaussian draws use numpy's ziggurat sampler.
Independent streams are derived with :func:`split_seed`, never by reusing a
generator across tasks.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def _as_finite_vector(v, name: str = "v") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def log_sum_exp(v) -> float:
    """Return ``log(sum(exp(v)))`` using the max-shift trick."""
    arr = _as_finite_vector(v)
    m = arr.max()
    return float(m + np.log(np.sum(np.exp(arr - m))))


def lse_rows(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vectorised log-sum-exp along ``axis`` (no validation, hot path)."""
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softmax(v) -> np.ndarray:
    arr = _as_finite_vector(v)
    return np.exp(arr - log_sum_exp(arr))


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a ``(..., C)`` array."""
    return np.exp(x - lse_rows(x)[..., None])


def log_softmax_rows(x: np.ndarray) -> np.ndarray:
    return x - lse_rows(x)[..., None]


def check_prob_vector(p, atol: float = 1e-9) -> np.ndarray:
    """Validate a probability vector and return it as float64."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("probability vector must be non-empty and 1-D")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("probability vector has negative or non-finite entries")
    if abs(arr.sum() - 1.0) > atol:
        raise ValueError(f"probabilities sum to {arr.sum()!r}, expected 1")
    return arr


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """PCG64 generator from a 64-bit seed (or an already split SeedSequence)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def split_seed(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Derive ``n`` statistically independent child seeds from ``seed``."""
    return np.random.SeedSequence(int(seed)).spawn(n)


def sample_diag_gaussian(seed, mean, diag_cov, n: int) -> np.ndarray:
    """Draw ``n`` rows from ``N(mean, diag(diag_cov))``.

    ``seed`` may be an int, a ``SeedSequence`` or a live ``Generator``; passing a
    generator advances it, which is how batch loops share one stream.
    """
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(diag_cov, dtype=np.float64)
    if mean.ndim != 1 or var.shape != mean.shape:
        raise ValueError("mean and diag_cov must be vectors of equal length")
    if np.any(var < 0) or not np.all(np.isfinite(var)):
        raise ValueError("diag_cov must be finite and nonnegative")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    eps = rng.standard_normal((n, mean.size))
    return mean + eps * np.sqrt(var)


def central_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = grad.reshape(-1)
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = h
        e = e.reshape(x.shape)
        fp, fm = float(f(x + e)), float(f(x - e))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {k}")
        flat[k] = (fp - fm) / (2.0 * h)
    return grad
