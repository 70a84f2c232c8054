"""A region where expected entropy exceeds regional entropy.

For two classes the prediction depends on z~ only through the logit gap
delta = (a_1 - a_0) z~ + (b_1 - b_0), which is Gaussian. Expected entropy is a
1-D integral that Gauss-Hermite quadrature evaluates to many digits, so the
comparison below carries no Monte Carlo error. The regional entropy falls
below it: the proxy is not an upper bound on this instance.
"""

import numpy as np

from recap.oracle import mc_bias_term
from recap.region import AffineHead, RegionSpec, regional_entropy

A = np.array([[-0.102, 0.055, -0.14, -0.683, 0.673],
              [-0.012, -1.335, -0.593, -1.427, -1.449]])
b = np.array([0.706, 0.474])
z = np.array([0.574, 0.066, -0.743, 1.023, -2.493])
S = np.array([0.819, 0.614, 0.269, 0.258, 0.289])
head = AffineHead(A, b)
region = RegionSpec(S, tau=1.0)

da = A[1] - A[0]
m = float(da @ z + b[1] - b[0])
v = float(da ** 2 @ S)


def binary_entropy(delta):
    # entropy of softmax([0, delta]) computed stably
    lse = np.logaddexp(0.0, delta)
    p1 = np.exp(delta - lse)
    return lse - p1 * delta


nodes, weights = np.polynomial.hermite_e.hermegauss(200)
exact = float(np.sum(weights * binary_entropy(m + np.sqrt(v) * nodes)) / np.sqrt(2 * np.pi))
mc = mc_bias_term(0, z, head, region, 200_000)

print(f"logit gap ~ N({m:.3f}, {v:.3f})")
print(f"expected entropy (quadrature) {exact:.8f}")
print(f"expected entropy (MC)         {mc.mean:.8f} +- {mc.stderr:.8f}")
print(f"regional entropy              {regional_entropy(z, head, region):.8f}")
print(f"gap {exact - regional_entropy(z, head, region):.4f} nats = "
      f"{(exact - regional_entropy(z, head, region)) / mc.stderr:.0f} standard errors")
