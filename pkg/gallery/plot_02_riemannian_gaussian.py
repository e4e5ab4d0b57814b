"""
Riemannian Gaussians on the disk
================================

The normalizing constant, the expected squared distance ``delta`` tracked by
the online filter, and sampling in geodesic polar coordinates.
"""

import numpy as np

from hadamard_hmm import RiemannianGaussian, delta_from_sigma, log_normalizer, sample_gaussian
from hadamard_hmm.manifold import PoincareDisk

disk = PoincareDisk()

# For small sigma the plane is nearly flat: Z ~ 2 pi sigma^2 and delta ~ 2 sigma^2.
for s in (0.01, 0.2, 1.0, 2.0):
    print(f"sigma={s:5.2f}  Z/(2 pi s^2)={np.exp(log_normalizer(s)) / (2 * np.pi * s * s):8.4f}"
          f"  delta/(2 s^2)={delta_from_sigma(s) / (2 * s * s):8.4f}")

# %%
# Monte Carlo check of delta and a histogram of the radii.
g = RiemannianGaussian(0.29 + 0.82j, 1.0)
y = sample_gaussian(g, rng_seed=0, n=50_000)
r = disk.dist(g.center, y)
print("mean d^2", np.mean(r ** 2), "delta", g.delta)
counts, edges = np.histogram(r, bins=12)
for c, lo in zip(counts, edges):
    print(f"{lo:5.2f} {'#' * (60 * c // counts.max())}")
