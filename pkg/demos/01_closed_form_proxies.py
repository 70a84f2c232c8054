"""Closed-form regional entropy and instability versus brute-force sampling.

A feature z is surrounded by a Gaussian region N(z, tau * diag(sigma)). The
closed forms summarise how confident and how stable the classifier is over
that region without drawing a single sample. Here they are compared with
Monte Carlo averages of the quantities they bound.
"""

import numpy as np

from recap.numerics import make_rng, softmax
from recap.oracle import mc_bias_term, mc_variance_term
from recap.region import (AffineHead, RegionSpec, augmented_probability, entropy_loss, regional_entropy,
                          regional_instability)

rng = make_rng(2024)
C, d = 6, 8
head = AffineHead(rng.normal(size=(C, d)), rng.normal(size=C))
z = rng.normal(size=d)
sigma = rng.uniform(0.05, 0.6, d)

print("plain prediction entropy at z:", round(entropy_loss(softmax(head.logits(z))), 4))
print(f"{'tau':>5s} {'L_RE':>8s} {'MC E[H]':>16s} {'L_RI':>8s} {'MC E[KL]':>16s}")
for tau in (0.1, 0.5, 1.2, 2.5):
    region = RegionSpec(sigma, tau)
    bias = mc_bias_term(1, z, head, region, 20_000)
    var = mc_variance_term(2, z, head, region, 20_000)
    print(f"{tau:5.1f} {regional_entropy(z, head, region):8.4f} {bias.mean:9.4f} +- {bias.stderr:.4f}"
          f" {regional_instability(z, head, region):8.4f} {var.mean:9.4f} +- {var.stderr:.4f}")

# With no spread the region is a point and the proxies collapse to plain quantities.
zero = RegionSpec(np.zeros(d))
print("sigma = 0:  L_RE - H(z) =", regional_entropy(z, head, zero) - entropy_loss(softmax(head.logits(z))),
      " L_RI =", regional_instability(z, head, zero))
print("augmented probability weights:", np.round(augmented_probability(z, head, RegionSpec(sigma)), 3))
