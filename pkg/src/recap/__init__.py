"""Regional confidence proxies for online test-time adaptation.

Closed-form regional entropy and regional instability of a linear softmax head
under a diagonal Gaussian feature region, Monte Carlo oracles that check them,
a small numpy backbone with normalization-affine adaptation, synthetic
corrupted streams and an experiment harness.
"""

from .region import (AffineHead, RecapHyper, RegionSpec, estimate_region, grad_z_objective,
                     recap_objective, regional_entropy, regional_instability)

__all__ = ["AffineHead", "RecapHyper", "RegionSpec", "estimate_region", "grad_z_objective",
           "recap_objective", "regional_entropy", "regional_instability"]
__version__ = "0.1.0"
