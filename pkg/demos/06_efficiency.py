"""Cost of the closed forms versus sampling.

The closed forms need one head evaluation per feature plus a C x C pair
matrix. The sampling alternative needs 128 head evaluations per feature. Both
are timed on a 64-feature batch with 10 classes and 16 dimensions.
"""

from recap.adapt import bench_proxy_vs_mc
from recap.numerics import make_rng
from recap.region import AffineHead, RegionSpec

rng = make_rng(0)
head = AffineHead(rng.normal(size=(10, 16)), rng.normal(size=10))
region = RegionSpec(rng.uniform(0.05, 1.0, 16))
for n_mc in (32, 128, 512):
    rep = bench_proxy_vs_mc(head, region, rng.normal(size=(64, 16)), n_mc=n_mc, repeats=50)
    print(f"MC samples {n_mc:>4d}: closed form {rep.closed_ns / 1e3:7.1f} us, MC {rep.mc_ns / 1e3:8.1f} us,"
          f" speedup {rep.speedup:6.1f}x")
