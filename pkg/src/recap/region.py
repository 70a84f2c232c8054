"""Gaussian feature regions and the closed-form region-confidence proxies.

A region around a feature ``z`` is ``N(z, tau * diag(sigma_diag))``. The two
proxies are closed-form functions of the classifier logits ``Az + b`` and of
the pairwise quadratic forms ``q_ij = 1/2 (a_i - a_j) S (a_i - a_j)^T`` with
``S = tau * diag(sigma_diag)``:

* regional entropy ``L_RE``: upper-bound proxy for the expected entropy over
  the region, weighted by the variance-augmented probability ``pbar``;
* regional instability ``L_RI``: upper bound of the expected KL divergence
  between the prediction at ``z`` and predictions inside the region.

Every exponent sum is evaluated in log space. Functions taking ``z`` accept a
single ``(d,)`` vector (scalar result) or an ``(n, d)`` batch (vector result).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import check_prob_vector, lse_rows, softmax_rows

DEFAULT_TAU = 1.2
DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True)
class AffineHead:
    """Linear classifier ``logits = A z + b`` with ``A`` of shape ``(C, d)``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64)
        if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
            raise ValueError(f"inconsistent head shapes A{A.shape} b{b.shape}")
        if A.shape[1] < 1:
            raise ValueError("feature dimension must be >= 1")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("head coefficients must be finite")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n_classes(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def logits(self, z: np.ndarray) -> np.ndarray:
        return z @ self.A.T + self.b


@dataclass(frozen=True)
class RegionSpec:
    """Diagonal source-feature variances and the scope multiplier ``tau``."""

    sigma_diag: np.ndarray
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        s = np.array(self.sigma_diag, dtype=np.float64)
        if s.ndim != 1 or np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("sigma_diag must be a finite nonnegative vector")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        s.setflags(write=False)
        object.__setattr__(self, "sigma_diag", s)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def cov_diag(self) -> np.ndarray:
        """Diagonal of the effective covariance ``tau * Sigma``."""
        return self.tau * self.sigma_diag

    def with_tau(self, tau: float) -> "RegionSpec":
        return RegionSpec(self.sigma_diag, tau)


@dataclass(frozen=True)
class RecapHyper:
    lam: float = DEFAULT_LAMBDA
    tau_re: float = 0.8 * np.log(10)
    l0: float = 0.7 * np.log(10)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not (self.tau_re > 0 and self.l0 > 0):
            raise ValueError("tau_re and l0 must be positive")

    @classmethod
    def for_classes(cls, n_classes: int, lam: float = DEFAULT_LAMBDA,
                    l0_frac: float = 0.7, tau_re_frac: float = 0.8) -> "RecapHyper":
        """Thresholds as fractions of ``ln C`` (small-network profile by default)."""
        lnc = float(np.log(n_classes))
        return cls(lam=lam, tau_re=tau_re_frac * lnc, l0=l0_frac * lnc)


@dataclass
class ObjectiveOutcome:
    l_re: np.ndarray
    l_ri: np.ndarray
    selected: np.ndarray
    weight: np.ndarray
    loss: float
    n_selected: int
    grad_z: np.ndarray | None = field(default=None, repr=False)


def estimate_region(source_features, tau: float = DEFAULT_TAU) -> RegionSpec:
    """Population variance (divide by n) of each feature column."""
    F = np.asarray(source_features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] < 2:
        raise ValueError("need at least 2 source feature rows to estimate a region")
    return RegionSpec(F.var(axis=0), tau)


def entropy_loss(p) -> float:
    p = check_prob_vector(p)
    nz = p[p > 0]
    return float(max(-np.sum(nz * np.log(nz)), 0.0))


def entropy_from_logits(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Entropy of ``softmax(logits)`` per row and its gradient w.r.t. the logits."""
    L = np.atleast_2d(logits)
    logp = L - lse_rows(L)[:, None]
    p = np.exp(logp)
    H = -np.sum(p * logp, axis=1)
    grad = -p * (logp + H[:, None])
    return H, grad


def _check_z(z, head: AffineHead) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.ndim != 2 or Z.shape[1] != head.dim:
        raise ValueError(f"feature dimension {Z.shape[-1]} does not match head dimension {head.dim}")
    return Z, single


def _check_region(head: AffineHead, region: RegionSpec) -> np.ndarray:
    if region.sigma_diag.shape[0] != head.dim:
        raise ValueError("region dimension does not match head dimension")
    return region.cov_diag


def pair_quadratic(head: AffineHead, region: RegionSpec) -> np.ndarray:
    """``q[i, j] = 1/2 (a_i - a_j) S (a_i - a_j)^T`` (symmetric, zero diagonal)."""
    S = _check_region(head, region)
    AS = head.A * S
    d = np.sum(AS * head.A, axis=1)
    q = np.maximum(0.5 * (d[:, None] + d[None, :]) - AS @ head.A.T, 0.0)
    np.fill_diagonal(q, 0.0)
    return q


def self_quadratic(head: AffineHead, region: RegionSpec) -> np.ndarray:
    """``s[i] = 1/2 a_i S a_i^T``, the logit shift of the augmented probability."""
    S = _check_region(head, region)
    return 0.5 * (head.A ** 2) @ S


def augmented_probability(z, head: AffineHead, region: RegionSpec) -> np.ndarray:
    Z, single = _check_z(z, head)
    P = softmax_rows(head.logits(Z) + self_quadratic(head, region))
    return P[0] if single else P


def _proxy_terms(L: np.ndarray, q: np.ndarray, s: np.ndarray, want_grad: bool):
    # V[n, j] = logsumexp_i (l_i + q_ij), factored as a matmul:
    # exp(l_i - max l) @ exp(q_ij - max_i q_ij). If that underflows, use the direct form.
    ml = L.max(axis=1)[:, None]
    el = np.exp(L - ml)
    zl = el.sum(axis=1)[:, None]
    qm = q.max(axis=0)
    Q = np.exp(q - qm)
    tot = el @ Q
    if tot.min() > 1e-250:
        V = ml + qm + np.log(tot)
        W = None
    else:
        E = L[:, :, None] + q[None, :, :]
        m = E.max(axis=1, keepdims=True)
        ex = np.exp(E - m)
        t3 = ex.sum(axis=1, keepdims=True)
        V = (m + np.log(t3))[:, 0, :]
        W = ex / t3
    lse_l = ml + np.log(zl)
    p = el / zl
    Ls = L + s
    es = np.exp(Ls - Ls.max(axis=1)[:, None])
    pbar = es / es.sum(axis=1)[:, None]
    U = V - L
    R = V - lse_l
    l_re = (pbar * U).sum(axis=1)
    l_ri = (p * R).sum(axis=1)
    if not want_grad:
        return l_re, l_ri, None, None
    # sum_j W[k, j] w_j with W[k, j] = softmax_k(l_k + q_kj)
    if W is None:
        mix_re = el * ((pbar / tot) @ Q.T)
        mix_ri = el * ((p / tot) @ Q.T)
    else:
        mix_re = (W @ pbar[:, :, None])[:, :, 0]
        mix_ri = (W @ p[:, :, None])[:, :, 0]
    g_re = pbar * (U - l_re[:, None]) + mix_re - pbar
    g_ri = p * (R - l_ri[:, None]) + mix_ri - p
    return l_re, l_ri, g_re, g_ri


def regional_terms(z, head: AffineHead, region: RegionSpec, geometry=None):
    """Both proxies at once; returns ``(l_re, l_ri)`` arrays for a batch."""
    Z, _ = _check_z(z, head)
    q, s = geometry if geometry is not None else region_geometry(head, region)
    l_re, l_ri, _, _ = _proxy_terms(head.logits(Z), q, s, want_grad=False)
    return np.maximum(l_re, 0.0), np.maximum(l_ri, 0.0)


def regional_entropy(z, head: AffineHead, region: RegionSpec):
    """Regional entropy ``L_RE`` (nats) of one feature or a batch of features."""
    _, single = _check_z(z, head)
    l_re, _ = regional_terms(z, head, region)
    return float(l_re[0]) if single else l_re


def regional_instability(z, head: AffineHead, region: RegionSpec):
    """Regional instability ``L_RI`` (nats) of one feature or a batch of features."""
    _, single = _check_z(z, head)
    _, l_ri = regional_terms(z, head, region)
    return float(l_ri[0]) if single else l_ri


def grad_z_objective(z, head: AffineHead, region: RegionSpec, lam: float) -> np.ndarray:
    """Gradient of ``L_RE + lam * L_RI`` with respect to the feature(s) ``z``."""
    Z, single = _check_z(z, head)
    _, _, g_re, g_ri = _proxy_terms(head.logits(Z), pair_quadratic(head, region),
                                    self_quadratic(head, region), want_grad=True)
    G = (g_re + lam * g_ri) @ head.A
    return G[0] if single else G


def region_geometry(head: AffineHead, region: RegionSpec) -> tuple[np.ndarray, np.ndarray]:
    """``(pair_quadratic, self_quadratic)``; constant while head and region are frozen."""
    return pair_quadratic(head, region), self_quadratic(head, region)


def recap_objective(zs, head: AffineHead, region: RegionSpec, hyper: RecapHyper,
                    with_grad: bool = False, geometry=None) -> ObjectiveOutcome:
    """Selected, weighted batch objective.

    The weight ``exp(l0 - l_re)`` and the selection mask are constants for the
    gradient. The loss is the mean over selected samples; it is 0 (and the
    caller should skip the update) when nothing is selected. With
    ``with_grad=True`` the outcome carries ``d loss / d zs`` as ``grad_z``.
    ``geometry`` may carry a cached :func:`region_geometry` result.
    """
    Z, _ = _check_z(zs, head)
    if Z.shape[0] == 0:
        raise ValueError("empty batch")
    q, s = geometry if geometry is not None else region_geometry(head, region)
    return recap_from_logits(head.logits(Z), q, s, hyper, head.A, with_grad)


def recap_from_logits(L: np.ndarray, q: np.ndarray, s: np.ndarray, hyper: RecapHyper,
                      A: np.ndarray, with_grad: bool = False) -> ObjectiveOutcome:
    """:func:`recap_objective` on precomputed logits (no validation; hot path)."""
    l_re, l_ri, g_re, g_ri = _proxy_terms(L, q, s, want_grad=with_grad)
    l_re = np.maximum(l_re, 0.0)
    l_ri = np.maximum(l_ri, 0.0)
    selected = l_re < hyper.tau_re
    weight = np.exp(hyper.l0 - l_re)
    n_sel = int(selected.sum())
    coef = np.where(selected, weight, 0.0) / max(1, n_sel)
    loss = float(np.sum(coef * (l_re + hyper.lam * l_ri)))
    grad = None
    if with_grad:
        grad = (coef[:, None] * (g_re + hyper.lam * g_ri)) @ A
    return ObjectiveOutcome(l_re, l_ri, selected, weight, loss, n_sel, grad)
