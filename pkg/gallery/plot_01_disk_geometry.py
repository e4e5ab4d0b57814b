"""
Geometry of the Poincaré disk
=============================

Distances, geodesics and centres of mass on the hyperbolic plane, and the
link with 2x2 SPD matrices of unit determinant.
"""

import numpy as np

from hadamard_hmm import PoincareDisk, SPD, disk_to_spd, distance, geodesic_point, karcher_mean

disk = PoincareDisk()

# Distances grow without bound toward the unit circle.
for r in (0.5, 0.9, 0.99, 0.999):
    print(f"d(0, {r}) = {distance(0j, r + 0j):.4f}")

# A geodesic point sits at the requested fraction of the distance.
x, z = 0.1 + 0.2j, -0.6 + 0.5j
m = geodesic_point(x, z, 0.25)
print("quarter point", m, distance(x, m) / distance(x, z))

# Centre of mass of a few points; with two points it is the midpoint.
pts = np.array([0.3 + 0.1j, -0.2 + 0.4j, 0.05 - 0.5j, 0.6j])
print("Karcher mean", karcher_mean(pts))
print("two-point mean vs midpoint", karcher_mean(pts[:2]), geodesic_point(pts[0], pts[1], 0.5))

# %%
# The disk and unit-determinant SPD(2) with the affine-invariant metric are
# isometric up to a constant factor.
spd = SPD(2)
a, b = disk_to_spd(x), disk_to_spd(z)
print("det", np.linalg.det(a), "ratio", spd.dist(a, b) / disk.dist(x, z), "sqrt 2 =", np.sqrt(2))
