import math

import numpy as np
import pytest

from recap.model import (AdaptState, TinyBackbone, backward_full, backward_norm_affine, forward, forward_batch,
                         load_checkpoint, pretrain_source, save_checkpoint, sgd_step, NORM_EPS)
from recap.numerics import central_diff_grad, make_rng
from recap.region import AffineHead, RegionSpec, regional_entropy, regional_instability
from recap.stream import SyntheticTask, gen_source_dataset


def small_net(seed=0, D=5, H=7, d=4, C=3):
    rng = make_rng(seed)
    bb = TinyBackbone(rng.normal(size=(H, D)), rng.normal(size=H) * 0.1, rng.uniform(0.5, 1.5, d),
                      rng.normal(size=d) * 0.1, rng.normal(size=(d, H)), rng.normal(size=d) * 0.1)
    return bb, AffineHead(rng.normal(size=(C, d)), rng.normal(size=C))


def test_forward_hand_computed():
    bb = TinyBackbone(W1=np.array([[1.0, 0.0], [0.5, -1.0], [0.0, 2.0]]), c1=np.array([0.0, 0.1, -0.2]),
                      gamma=np.array([2.0, 1.0]), beta=np.array([0.5, -0.5]),
                      W2=np.array([[1.0, -1.0, 0.0], [0.0, 1.0, 1.0]]), c2=np.zeros(2))
    head = AffineHead(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), np.array([0.0, 0.0, -1.0]))
    z, logits, p = forward(np.array([1.0, 0.0]), bb, head)
    # step by step: h = tanh([1, 0.6, -0.2]); u = [h0 - h1, h1 + h2]
    h = [math.tanh(1.0), math.tanh(0.6), math.tanh(-0.2)]
    u = [h[0] - h[1], h[1] + h[2]]
    mu = (u[0] + u[1]) / 2
    sd = math.sqrt(((u[0] - mu) ** 2 + (u[1] - mu) ** 2) / 2 + NORM_EPS)
    n = [(u[0] - mu) / sd, (u[1] - mu) / sd]
    z_ref = [2.0 * n[0] + 0.5, n[1] - 0.5]
    l_ref = [z_ref[0], z_ref[1], z_ref[0] + z_ref[1] - 1.0]
    e = [math.exp(v) for v in l_ref]
    np.testing.assert_allclose(z, z_ref, rtol=1e-14)
    np.testing.assert_allclose(logits, l_ref, rtol=1e-14)
    np.testing.assert_allclose(p, [v / sum(e) for v in e], rtol=1e-14)


def test_identity_affine_gives_standardised_features():
    bb, head = small_net(1)
    bb.gamma[:] = 1.0
    bb.beta[:] = 0.0
    X = make_rng(2).normal(size=(10, 5))
    z = forward_batch(X, bb, head).z
    np.testing.assert_allclose(z.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.mean(z ** 2, axis=1), 1.0, atol=1e-3)


def test_normalisation_contract_with_constant_gamma():
    bb, head = small_net(3)
    bb.gamma[:] = 1.7
    z = forward_batch(make_rng(4).normal(size=(6, 5)), bb, head).z
    np.testing.assert_allclose(((z - bb.beta) / 1.7).mean(axis=1), 0.0, atol=1e-9)


def test_dimension_mismatch():
    bb, head = small_net()
    with pytest.raises(ValueError):
        forward(np.ones(6), bb, head)
    with pytest.raises(ValueError):
        forward_batch(np.ones((2, 5)), bb, AffineHead(np.ones((3, 9)), np.zeros(3)))


def pipeline_loss(bb, head, region, X, lam=0.5):
    z = forward_batch(X, bb, head).z
    return float(np.sum(regional_entropy(z, head, region) + lam * regional_instability(z, head, region)))


@pytest.mark.parametrize("seed", range(4))
def test_backward_norm_affine_matches_fd(seed):
    from recap.region import grad_z_objective

    bb, head = small_net(seed)
    region = RegionSpec(make_rng(seed + 50).uniform(0.1, 1, 4))
    X = make_rng(seed + 60).normal(size=(3, 5))
    dz = grad_z_objective(forward_batch(X, bb, head).z, head, region, 0.5)
    g_gamma, g_beta = backward_norm_affine(X, bb, dz)
    for name, g in (("gamma", g_gamma), ("beta", g_beta)):
        def f(v, name=name):
            b2 = bb.copy()
            setattr(b2, name, v)
            return pipeline_loss(b2, head, region, X)
        fd = central_diff_grad(f, getattr(bb, name).copy())
        assert np.max(np.abs(g - fd)) / (np.linalg.norm(g) + 1e-8) <= 1e-5


def test_backward_norm_affine_trivial_cases():
    bb, head = small_net(5)
    x = make_rng(6).normal(size=5)
    gg, gb = backward_norm_affine(x, bb, np.zeros(4))
    assert np.all(gg == 0) and np.all(gb == 0)
    # gamma gradient vanishes where the normalised feature is zero
    cache = forward_batch(x, bb, head)
    cache.normed[0, 1] = 0.0
    gg, _ = backward_norm_affine(cache, bb, np.ones(4))
    assert gg[1] == 0.0


def test_backward_full_matches_fd():
    bb, head = small_net(7)
    X = make_rng(8).normal(size=(4, 5))
    y = np.array([0, 2, 1, 2])

    def ce(b2, h2):
        lp = forward_batch(X, b2, h2).logits
        lp = lp - np.log(np.exp(lp).sum(axis=1, keepdims=True))
        return float(-lp[np.arange(4), y].mean())

    cache = forward_batch(X, bb, head)
    grads = backward_full(cache, bb, head, (cache.p - np.eye(3)[y]) / 4)
    for name in ("W1", "c1", "gamma", "beta", "W2", "c2"):
        def f(v, name=name):
            b2 = bb.copy()
            setattr(b2, name, v.reshape(getattr(bb, name).shape))
            return ce(b2, head)
        fd = central_diff_grad(f, getattr(bb, name).ravel().copy()).reshape(grads[name].shape)
        np.testing.assert_allclose(grads[name], fd, atol=1e-8)
    fdA = central_diff_grad(lambda v: ce(bb, AffineHead(v.reshape(3, 4), head.b)), head.A.ravel().copy())
    np.testing.assert_allclose(grads["A"], fdA.reshape(3, 4), atol=1e-8)


def test_sgd_examples():
    p = {"w": np.array([1.0, -2.0])}
    same, _ = sgd_step(p, {"w": np.zeros(2)}, AdaptState(lr=0.1, momentum=0.9))
    np.testing.assert_array_equal(same["w"], p["w"])
    g = np.array([0.5, 1.0])
    plain, _ = sgd_step(p, {"w": g}, AdaptState(lr=0.1, momentum=0.0))
    np.testing.assert_allclose(plain["w"], p["w"] - 0.1 * g)
    st = AdaptState(lr=0.1, momentum=0.9)
    p1, st = sgd_step(p, {"w": g}, st)
    p2, st = sgd_step(p1, {"w": g}, st)
    np.testing.assert_allclose(p["w"] - p2["w"], 0.1 * g * (2 + 0.9), rtol=1e-14)
    with pytest.raises(ValueError):
        sgd_step(p, {"w": np.zeros(3)}, st)


def test_pretrain_separable_blobs():
    rng = make_rng(0)
    X = np.concatenate([rng.normal(size=(200, 8)) * 0.5 + 3, rng.normal(size=(200, 8)) * 0.5 - 3])
    y = np.repeat([0, 1], 200)
    bb, head, acc = pretrain_source((X, y), epochs=20, seed=1, hidden=16, feat_dim=4)
    assert acc >= 0.99
    bb2, head2, _ = pretrain_source((X, y), epochs=20, seed=1, hidden=16, feat_dim=4)
    np.testing.assert_array_equal(bb.W1, bb2.W1)
    np.testing.assert_array_equal(head.A, head2.A)


def test_pretrain_default_profile_smoke():
    task = SyntheticTask.make(10, 32, seed=0)
    X, y = gen_source_dataset(task, 2000)
    bb, head, acc = pretrain_source((X, y), epochs=3, lr=0.01, hidden=64, feat_dim=16)
    assert np.all(np.isfinite(bb.W1)) and np.all(np.isfinite(head.A))
    assert acc > 0.5
    with pytest.raises(ValueError):
        pretrain_source((np.zeros((0, 32)), np.zeros(0, dtype=int)))


def test_checkpoint_round_trip(tmp_path):
    bb, head = small_net(9)
    path = tmp_path / "m.npz"
    save_checkpoint(path, bb, head)
    bb2, head2 = load_checkpoint(path)
    for name in ("W1", "c1", "gamma", "beta", "W2", "c2"):
        np.testing.assert_array_equal(getattr(bb, name), getattr(bb2, name))
    np.testing.assert_array_equal(head.A, head2.A)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.npz")
