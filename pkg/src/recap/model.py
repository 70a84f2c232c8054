"""Small dense backbone with a per-sample normalisation layer and affine head.

Architecture: ``x -> tanh(W1 x + c1) -> W2 h + c2 -> standardise -> gamma * . + beta``
followed by the classifier ``A z + b``. Only ``gamma`` and ``beta`` are touched
at test time; pretraining updates everything.

SGD uses classical (non-Nesterov) momentum: ``v <- m v + g``, ``p <- p - lr v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .numerics import log_softmax_rows, make_rng, softmax_rows
from .region import AffineHead

NORM_EPS = 1e-5
CHECKPOINT_VERSION = 1
ADAPT_LR = 0.001
PRETRAIN_LR = 0.01
MOMENTUM = 0.9
PRETRAIN_WD = 3e-2
WD_PARAMS = ("A",)


@dataclass
class TinyBackbone:
    W1: np.ndarray  # (H, D)
    c1: np.ndarray  # (H,)
    gamma: np.ndarray  # (d,)
    beta: np.ndarray  # (d,)
    W2: np.ndarray  # (d, H)
    c2: np.ndarray  # (d,)

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def feat_dim(self) -> int:
        return self.W2.shape[0]

    def copy(self) -> "TinyBackbone":
        return TinyBackbone(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    @classmethod
    def init(cls, in_dim: int = 32, hidden: int = 64, feat_dim: int = 16, seed: int = 0) -> "TinyBackbone":
        rng = make_rng(seed)
        return cls(
            W1=rng.standard_normal((hidden, in_dim)) / np.sqrt(in_dim),
            c1=np.zeros(hidden),
            gamma=np.ones(feat_dim),
            beta=np.zeros(feat_dim),
            W2=rng.standard_normal((feat_dim, hidden)) / np.sqrt(hidden),
            c2=np.zeros(feat_dim),
        )


@dataclass
class ForwardCache:
    x: np.ndarray
    h: np.ndarray
    normed: np.ndarray
    std: np.ndarray
    z: np.ndarray
    logits: np.ndarray
    p: np.ndarray


def forward_batch(X, backbone: TinyBackbone, head: AffineHead) -> ForwardCache:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != backbone.in_dim:
        raise ValueError(f"input dimension {X.shape[1]} != backbone input dimension {backbone.in_dim}")
    if head.dim != backbone.feat_dim:
        raise ValueError("head and backbone feature dimensions differ")
    h = np.tanh(X @ backbone.W1.T + backbone.c1)
    u = h @ backbone.W2.T + backbone.c2
    centred = u - u.mean(axis=1, keepdims=True)
    std = np.sqrt(np.mean(centred ** 2, axis=1, keepdims=True) + NORM_EPS)
    normed = centred / std
    z = backbone.gamma * normed + backbone.beta
    logits = head.logits(z)
    return ForwardCache(X, h, normed, std, z, logits, softmax_rows(logits))


def forward(x, backbone: TinyBackbone, head: AffineHead):
    """Single-input forward pass returning ``(z, logits, p)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward expects a single input vector; use forward_batch")
    c = forward_batch(x[None, :], backbone, head)
    return c.z[0], c.logits[0], c.p[0]


def backward_norm_affine(x, backbone: TinyBackbone, dL_dz) -> tuple[np.ndarray, np.ndarray]:
    """Chain ``dL/dz`` into ``(dL/dgamma, dL/dbeta)``.

    ``dL_dz`` may be ``(d,)`` or ``(n, d)``; per-row contributions are summed,
    so any batch reduction must already be folded into ``dL_dz``.
    """
    dz = np.atleast_2d(np.asarray(dL_dz, dtype=np.float64))
    if not np.all(np.isfinite(dz)):
        raise FloatingPointError("non-finite upstream gradient")
    if isinstance(x, ForwardCache):
        normed = x.normed
    else:
        X = np.atleast_2d(np.asarray(x, dtype=np.float64))
        h = np.tanh(X @ backbone.W1.T + backbone.c1)
        u = h @ backbone.W2.T + backbone.c2
        c = u - u.mean(axis=1, keepdims=True)
        normed = c / np.sqrt(np.mean(c ** 2, axis=1, keepdims=True) + NORM_EPS)
    if normed.shape != dz.shape:
        raise ValueError("dL_dz shape does not match batch features")
    return np.sum(dz * normed, axis=0), np.sum(dz, axis=0)


def backward_full(cache: ForwardCache, backbone: TinyBackbone, head: AffineHead,
                  dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every parameter given ``dL/dlogits`` (already batch-reduced)."""
    grads = {"A": dlogits.T @ cache.z, "b": dlogits.sum(axis=0)}
    dz = dlogits @ head.A
    grads["gamma"] = np.sum(dz * cache.normed, axis=0)
    grads["beta"] = dz.sum(axis=0)
    dn = dz * backbone.gamma
    du = (dn - dn.mean(axis=1, keepdims=True)
          - cache.normed * np.mean(dn * cache.normed, axis=1, keepdims=True)) / cache.std
    grads["W2"] = du.T @ cache.h
    grads["c2"] = du.sum(axis=0)
    da = (du @ backbone.W2) * (1.0 - cache.h ** 2)
    grads["W1"] = da.T @ cache.x
    grads["c1"] = da.sum(axis=0)
    return grads


@dataclass
class AdaptState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    lr: float = ADAPT_LR
    momentum: float = MOMENTUM


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             state: AdaptState) -> tuple[dict[str, np.ndarray], AdaptState]:
    """One classical-momentum SGD step; returns new arrays, inputs are not mutated."""
    new_params, new_vel = dict(params), dict(state.velocity)
    for name, g in grads.items():
        p = params[name]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        elif v.shape != p.shape:
            raise ValueError(f"momentum buffer shape mismatch for {name!r}")
        v = state.momentum * v + g
        new_vel[name] = v
        new_params[name] = p - state.lr * v
    return new_params, replace(state, velocity=new_vel)


def accuracy(X, y, backbone: TinyBackbone, head: AffineHead) -> float:
    logits = forward_batch(X, backbone, head).logits
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(y)))


def pretrain_source(dataset, epochs: int = 20, lr: float = PRETRAIN_LR, seed: int = 0,
                    hidden: int = 64, feat_dim: int = 16, batch_size: int = 64,
                    momentum: float = MOMENTUM, weight_decay: float = PRETRAIN_WD):
    """Train backbone and head with cross-entropy; returns ``(backbone, head, source_acc)``.

    ``weight_decay`` is an L2 penalty on the parameters named in ``WD_PARAMS``
    (the head matrix only); it keeps the logit scale calibrated.
    """
    X, y = dataset
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    n_classes = int(y.max()) + 1
    init_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(2)
    backbone = TinyBackbone.init(X.shape[1], hidden, feat_dim, seed=init_seq)
    rng_init = make_rng(init_seq.spawn(1)[0])
    A = rng_init.standard_normal((n_classes, feat_dim)) / np.sqrt(feat_dim)
    b = np.zeros(n_classes)
    params = {f.name: getattr(backbone, f.name) for f in fields(backbone)}
    params.update(A=A, b=b)
    state = AdaptState(lr=lr, momentum=momentum)
    rng = make_rng(shuffle_seq)
    onehot = np.eye(n_classes)[y]
    for _ in range(epochs):
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], batch_size):
            idx = order[start:start + batch_size]
            bb = TinyBackbone(**{k: params[k] for k in ("W1", "c1", "gamma", "beta", "W2", "c2")})
            hd = AffineHead(params["A"], params["b"])
            cache = forward_batch(X[idx], bb, hd)
            dlogits = (cache.p - onehot[idx]) / idx.size
            grads = backward_full(cache, bb, hd, dlogits)
            for name in WD_PARAMS:
                grads[name] = grads[name] + weight_decay * params[name]
            params, state = sgd_step(params, grads, state)
    backbone = TinyBackbone(**{k: params[k] for k in ("W1", "c1", "gamma", "beta", "W2", "c2")})
    head = AffineHead(params["A"], params["b"])
    return backbone, head, accuracy(X, y, backbone, head)


def cross_entropy(X, y, backbone: TinyBackbone, head: AffineHead) -> float:
    lp = log_softmax_rows(forward_batch(X, backbone, head).logits)
    return float(-np.mean(lp[np.arange(len(y)), np.asarray(y)]))


def save_checkpoint(path, backbone: TinyBackbone, head: AffineHead) -> None:
    """Write all parameters to an ``.npz`` archive with a format version."""
    arrays = {f.name: getattr(backbone, f.name) for f in fields(backbone)}
    arrays.update(A=np.asarray(head.A), b=np.asarray(head.b))
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, format_version=np.int64(CHECKPOINT_VERSION), **arrays)


def load_checkpoint(path) -> tuple[TinyBackbone, AffineHead]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        backbone = TinyBackbone(**{f.name: data[f.name].copy() for f in fields(TinyBackbone)})
        head = AffineHead(data["A"].copy(), data["b"].copy())
    return backbone, head
