"""Geometry of the Poincaré disk and of SPD matrices.

Two Hadamard manifolds are supported:

* :class:`PoincareDisk` -- points are complex numbers ``z`` with ``|z| < 1``,
  collections of points are 1-d complex arrays.
* :class:`SPD` -- points are ``d x d`` symmetric positive-definite matrices,
  collections are arrays of shape ``(n, d, d)``. Distances use the
  affine-invariant metric ``d(x, y)^2 = tr(log(x^-1 y)^2)``.

Every method broadcasts over leading axes where that is cheap to do, so the
filter can evaluate a whole minibatch of distances at once. Module-level
functions (:func:`distance`, :func:`geodesic_point`, ...) infer the manifold
from the point type.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BOUNDARY_EPS = 1e-14
SYM_TOL = 1e-10
EIG_MIN = 1e-12

KARCHER_TOL = 1e-9
KARCHER_MAX_ITER = 200


class ManifoldError(ValueError):
    """Invalid point, kind mismatch or failed geometric computation."""


class ConvergenceError(ManifoldError):
    pass


# ---------------------------------------------------------------------------
# symmetric matrix functions


def _eig_apply(x, fun):
    """Apply ``fun`` to the eigenvalues of symmetric matrices ``x``."""
    w, v = np.linalg.eigh(x)
    return (v * fun(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def sym_logm(x):
    return _eig_apply(x, np.log)


def sym_expm(x):
    return _eig_apply(x, np.exp)


def sym_sqrtm(x):
    return _eig_apply(x, np.sqrt)


def sym_invsqrtm(x):
    return _eig_apply(x, lambda w: 1.0 / np.sqrt(w))


def sym_powm(x, p):
    return _eig_apply(x, lambda w: w ** p)


def _sym(x):
    return 0.5 * (x + np.swapaxes(x, -1, -2))


# ---------------------------------------------------------------------------
# unchecked disk kernels (inputs must already be valid points)


def disk_dist(x, y):
    # acosh(1 + 2|x-y|^2 / den) written without cancellation
    den = (1.0 - (x.real ** 2 + x.imag ** 2)) * (1.0 - (y.real ** 2 + y.imag ** 2))
    return 2.0 * np.arcsinh(np.abs(x - y) / np.sqrt(den))


def disk_geodesic(x, z, tau):
    u = (z - x) / (1.0 - np.conj(x) * z)
    r = np.abs(u)
    safe = np.where(r > 0, r, 1.0)
    w = np.where(r > 0, np.tanh(tau * np.arctanh(r)) * u / safe, 0j)
    return (w + x) / (1.0 + np.conj(x) * w)


@dataclass(frozen=True)
class PoincareDisk:
    """Hyperbolic plane in the Poincaré disk model (curvature -1)."""

    name = "poincare_disk"
    # lower bound of the sectional curvature is -curvature
    curvature = 1.0

    @property
    def origin(self):
        return 0j

    def __str__(self):
        return "PoincareDisk"

    def validate(self, z):
        """Return ``z`` as a complex array, raising on invalid points."""
        z = np.asarray(z)
        if np.iscomplexobj(z):
            z = z.astype(complex)
        elif np.issubdtype(z.dtype, np.number):
            z = z.astype(float).astype(complex)
        else:
            raise ManifoldError(f"disk points must be complex numbers, got dtype {z.dtype}")
        if not np.all(np.isfinite(z)):
            raise ManifoldError("non-finite disk coordinates")
        if np.any(np.abs(z) >= 1.0 - BOUNDARY_EPS):
            raise ManifoldError("disk point on or outside the unit circle")
        return z

    def is_point(self, z):
        try:
            self.validate(z)
        except ManifoldError:
            return False
        return True

    def dist(self, x, y):
        return disk_dist(self.validate(x), self.validate(y))

    def dist2(self, x, y):
        return self.dist(x, y) ** 2

    def translate(self, c, z):
        """Möbius isometry sending the origin to ``c``."""
        c = self.validate(c)
        z = self.validate(z)
        return (z + c) / (1.0 + np.conj(c) * z)

    def translate_inv(self, c, z):
        """Inverse of :meth:`translate`: sends ``c`` to the origin."""
        c = self.validate(c)
        z = self.validate(z)
        return (z - c) / (1.0 - np.conj(c) * z)

    # Tangent vectors are complex numbers whose modulus is the Riemannian
    # length. At the origin exp/log are radial; elsewhere they are
    # conjugated by the translation (whose differential at 0 is a positive
    # scaling, so no rotation is introduced).

    @staticmethod
    def _log0(w):
        r = np.abs(w)
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, 2.0 * np.arctanh(r) * w / safe, 0j)

    @staticmethod
    def _exp0(v):
        r = np.abs(v)
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, np.tanh(r / 2.0) * v / safe, 0j)

    def log(self, x, y):
        return self._log0(self.translate_inv(x, y))

    def exp(self, x, v):
        return self.translate(x, self._exp0(np.asarray(v, dtype=complex)))

    def geodesic(self, x, z, tau):
        return disk_geodesic(self.validate(x), self.validate(z), tau)

    def tangent_norm(self, x, v):
        return np.abs(v)

    def to_json(self, z):
        z = complex(z)
        return [z.real, z.imag]

    def from_json(self, obj):
        return self.validate(complex(obj[0], obj[1]))[()]

    def coords(self, z):
        """Flat real coordinates used by CSV files."""
        z = complex(z)
        return [z.real, z.imag]

    def from_coords(self, values):
        return complex(values[0], values[1])

    def coord_names(self):
        return ["re", "im"]

    def stack(self, points):
        return self.validate(np.asarray(list(points), dtype=complex).reshape(-1))


@dataclass(frozen=True)
class SPD:
    """Symmetric positive-definite ``dim x dim`` matrices, affine-invariant metric."""

    dim: int = 2

    name = "spd"
    curvature = 0.5

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ManifoldError(f"SPD dimension must be a positive integer, got {self.dim}")

    @property
    def origin(self):
        return np.eye(self.dim)

    def __str__(self):
        return f"SPD({self.dim})"

    def validate(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-2:] != (self.dim, self.dim):
            raise ManifoldError(f"expected {self.dim}x{self.dim} matrices, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ManifoldError("non-finite SPD entries")
        asym = np.linalg.norm(x - np.swapaxes(x, -1, -2), axis=(-2, -1))
        scale = np.maximum(np.linalg.norm(x, axis=(-2, -1)), 1e-300)
        if np.any(asym / scale >= SYM_TOL):
            raise ManifoldError("matrix is not symmetric")
        if np.any(np.linalg.eigvalsh(x)[..., 0] <= EIG_MIN):
            raise ManifoldError("matrix is not positive definite")
        return x

    def is_point(self, x):
        try:
            self.validate(x)
        except ManifoldError:
            return False
        return True

    def _whitened(self, x, y):
        isq = sym_invsqrtm(self.validate(x))
        return _sym(isq @ self.validate(y) @ isq)

    def dist(self, x, y):
        w = np.linalg.eigvalsh(self._whitened(x, y))
        return np.sqrt(np.sum(np.log(w) ** 2, axis=-1))

    def dist2(self, x, y):
        return self.dist(x, y) ** 2

    def translate(self, c, x):
        """Congruence ``x -> c^1/2 x c^1/2`` sending the identity to ``c``."""
        sq = sym_sqrtm(self.validate(c))
        return _sym(sq @ self.validate(x) @ sq)

    def translate_inv(self, c, x):
        isq = sym_invsqrtm(self.validate(c))
        return _sym(isq @ self.validate(x) @ isq)

    def log(self, x, y):
        x = self.validate(x)
        sq = sym_sqrtm(x)
        return _sym(sq @ sym_logm(self._whitened(x, y)) @ sq)

    def exp(self, x, v):
        x = self.validate(x)
        sq = sym_sqrtm(x)
        isq = sym_invsqrtm(x)
        return _sym(sq @ sym_expm(_sym(isq @ np.asarray(v, dtype=float) @ isq)) @ sq)

    def geodesic(self, x, z, tau):
        x = self.validate(x)
        sq = sym_sqrtm(x)
        tau = np.asarray(tau, dtype=float)[..., None, None]
        w, v = np.linalg.eigh(self._whitened(x, z))
        inner = (v * w[..., None, :] ** tau) @ np.swapaxes(v, -1, -2)
        return _sym(sq @ inner @ sq)

    def tangent_norm(self, x, v):
        isq = sym_invsqrtm(self.validate(x))
        return np.linalg.norm(isq @ v @ isq, axis=(-2, -1))

    def to_json(self, x):
        return np.asarray(x, dtype=float).tolist()

    def from_json(self, obj):
        return self.validate(np.array(obj, dtype=float))

    def coords(self, x):
        return np.asarray(x, dtype=float).ravel().tolist()

    def from_coords(self, values):
        return np.asarray(values, dtype=float).reshape(self.dim, self.dim)

    def coord_names(self):
        return [f"x{i}{j}" for i in range(self.dim) for j in range(self.dim)]

    def stack(self, points):
        arr = np.asarray(list(points), dtype=float).reshape(-1, self.dim, self.dim)
        return self.validate(arr)


Manifold = PoincareDisk | SPD


def kind_of(point):
    """Infer the manifold a single point belongs to."""
    arr = np.asarray(point)
    if arr.ndim == 0:
        return PoincareDisk()
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        return SPD(arr.shape[0])
    raise ManifoldError(f"cannot infer manifold from array of shape {arr.shape}")


def _common_kind(*points):
    kinds = {kind_of(p) for p in points}
    if len(kinds) != 1:
        raise ManifoldError(f"points from different manifolds: {sorted(map(str, kinds))}")
    return kinds.pop()


def distance(x, y):
    """Riemannian distance between two points of the same manifold."""
    return float(_common_kind(x, y).dist(x, y))


def geodesic_point(x, z, tau):
    """Point a fraction ``tau`` of the way along the geodesic from ``x`` to ``z``."""
    if not 0.0 <= tau <= 1.0:
        raise ManifoldError(f"tau must lie in [0, 1], got {tau}")
    m = _common_kind(x, z)
    out = m.geodesic(x, z, tau)
    return out[()] if isinstance(m, PoincareDisk) else out


def translate_to(c, x):
    m = _common_kind(c, x)
    out = m.translate(c, x)
    return out[()] if isinstance(m, PoincareDisk) else out


def translate_from(c, x):
    m = _common_kind(c, x)
    out = m.translate_inv(c, x)
    return out[()] if isinstance(m, PoincareDisk) else out


def karcher_objective(manifold, m, points, weights):
    return float(np.sum(weights * manifold.dist2(m, points)))


def karcher_mean(points, weights=None, manifold=None, init=None,
                 tol=KARCHER_TOL, max_iter=KARCHER_MAX_ITER):
    """Weighted Riemannian centre of mass.

    Riemannian gradient descent. The step is the inverse of an upper bound on
    the Hessian of the objective, ``sum_i w_i s r_i coth(s r_i)`` with ``s``
    the square root of the curvature bound; a plain unit step oscillates on
    widely spread data, where that Hessian exceeds 2. A backtracking guard
    keeps the objective non-increasing.

    Parameters
    ----------
    points : sequence of points, or stacked array
    weights : array_like, optional
        Nonnegative weights summing to one. Uniform if omitted.
    manifold : PoincareDisk or SPD, optional
        Inferred from the first point if omitted.
    init : point, optional
        Starting iterate; defaults to the highest-weight point.

    Returns
    -------
    mean : point
        Minimizer of ``sum_i w_i d(m, x_i)^2``.

    Raises
    ------
    ManifoldError
        On empty input or invalid weights.
    ConvergenceError
        If the gradient norm is still above ``tol`` after ``max_iter`` steps.
    """
    if manifold is None:
        if isinstance(points, np.ndarray):
            manifold = PoincareDisk() if np.iscomplexobj(points) or points.ndim == 1 else SPD(points.shape[-1])
        else:
            points = list(points)
            if not points:
                raise ManifoldError("karcher_mean of an empty set")
            manifold = _common_kind(*points)
    pts = manifold.stack(points)
    n = len(pts)
    if n == 0:
        raise ManifoldError("karcher_mean of an empty set")
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape != (n,):
            raise ManifoldError(f"{len(w)} weights for {n} points")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ManifoldError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ManifoldError(f"weights sum to {w.sum()}, not 1")

    m = pts[int(np.argmax(w))] if init is None else manifold.validate(init)
    wb = w.reshape((n,) + (1,) * (pts.ndim - 1))
    obj = karcher_objective(manifold, m, pts, w)
    for _ in range(max_iter):
        v = np.sum(wb * manifold.log(m, pts), axis=0)
        if manifold.tangent_norm(m, v) < tol:
            return m[()] if isinstance(manifold, PoincareDisk) else m
        s = np.sqrt(manifold.curvature) * manifold.dist(m, pts)
        hess = np.sum(w * np.where(s > 1e-8, s / np.tanh(np.maximum(s, 1e-8)), 1.0))
        step = 1.0 / max(hess, 1.0)
        while True:
            cand = manifold.exp(m, step * v)
            cand_obj = karcher_objective(manifold, cand, pts, w)
            # decreases below rounding level are not detectable
            if cand_obj <= obj * (1 + 1e-12) or step < 1e-8:
                break
            step *= 0.5
        m, obj = cand, cand_obj
    v = np.sum(wb * manifold.log(m, pts), axis=0)
    if manifold.tangent_norm(m, v) < tol:
        return m[()] if isinstance(manifold, PoincareDisk) else m
    raise ConvergenceError(f"karcher_mean did not converge in {max_iter} iterations")


def disk_to_spd(z):
    """Map disk points to unit-determinant 2x2 SPD matrices.

    Cayley transform to the upper half-plane ``w = x + iy`` followed by
    ``w -> [[1, x], [x, x^2 + y^2]] / y``. The map is an isometry up to the
    constant factor ``sqrt(2)``.
    """
    z = PoincareDisk().validate(z)
    w = 1j * (1.0 + z) / (1.0 - z)
    x, y = w.real, w.imag
    out = np.empty(z.shape + (2, 2))
    out[..., 0, 0] = 1.0 / y
    out[..., 0, 1] = out[..., 1, 0] = x / y
    out[..., 1, 1] = (x * x + y * y) / y
    return out
