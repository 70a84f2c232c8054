"""Analytic gradients of the proxies, checked against finite differences.

The adaptation signal is d(L_RE + lambda L_RI)/dz, pushed through the
normalisation affine parameters (gamma, beta) of the backbone. Both stages are
compared with central differences.
"""

import numpy as np

from recap.model import backward_norm_affine, forward_batch
from recap.numerics import central_diff_grad, make_rng
from recap.region import grad_z_objective, regional_entropy, regional_instability
from recap.verify import random_instance, random_pipeline, rel_err

rng = make_rng(5)
lam = 0.5
inst = random_instance(rng)
f = lambda z: regional_entropy(z, inst.head, inst.region) + lam * regional_instability(z, inst.head, inst.region)
g = grad_z_objective(inst.z, inst.head, inst.region, lam)
fd = central_diff_grad(f, inst.z)
print(f"feature gradient, C={inst.head.n_classes} d={inst.head.dim}: relative error {rel_err(g, fd):.2e}")

bb, head, region, X = random_pipeline(rng)
cache = forward_batch(X, bb, head)
gg, gb = backward_norm_affine(cache, bb, grad_z_objective(cache.z, head, region, lam) / X.shape[0])


def loss(theta):
    b2 = bb.copy()
    b2.gamma, b2.beta = theta[:bb.feat_dim], theta[bb.feat_dim:]
    z = forward_batch(X, b2, head).z
    return float(np.mean(regional_entropy(z, head, region) + lam * regional_instability(z, head, region)))


fd = central_diff_grad(loss, np.concatenate([bb.gamma, bb.beta]))
print(f"(gamma, beta) gradient through the backbone: relative error {rel_err(np.concatenate([gg, gb]), fd):.2e}")
