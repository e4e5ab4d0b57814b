"""Riemannian Gaussian distributions on the hyperbolic plane.

The density with respect to the Riemannian volume is

    p(y; c, sigma) = exp(-d(y, c)^2 / (2 sigma^2)) / Z(sigma)

with, on the Poincaré disk,

    Z(sigma) = 2 pi sqrt(pi/2) sigma exp(sigma^2/2) erf(sigma/sqrt 2).

``delta`` is the derivative of ``log Z`` with respect to the natural parameter
``eta = -1/(2 sigma^2)``; it equals the expected squared distance of a draw to
the centre, and is what the online filter tracks instead of ``sigma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from functools import lru_cache

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import erf

from .manifold import SPD, ManifoldError, PoincareDisk

SIGMA_MIN = 1e-3
SIGMA_MAX = 20.0
N_KNOTS = 4096

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_SQRT2 = math.sqrt(2.0)
_LOG_CONST = np.log(2.0 * np.pi * np.sqrt(np.pi / 2.0))


class UnsupportedManifoldError(ManifoldError):
    """Normalizing constants are only available on the Poincaré disk."""


def _require_disk(manifold):
    if manifold is None or isinstance(manifold, PoincareDisk):
        return
    if isinstance(manifold, SPD):
        raise UnsupportedManifoldError(
            f"Gaussian normalizing constant not implemented for {manifold}")
    raise ManifoldError(f"unknown manifold {manifold!r}")


def _check_sigma(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0):
        raise ValueError("sigma must be positive and finite")
    return sigma


def log_normalizer(sigma, manifold=None):
    """``log Z(sigma)`` on the Poincaré disk (vectorized over ``sigma``)."""
    _require_disk(manifold)
    return _log_normalizer_unchecked(_check_sigma(sigma))


def _log_normalizer_unchecked(s):
    return _LOG_CONST + np.log(s) + 0.5 * s * s + np.log(erf(s / np.sqrt(2.0)))


def _erf_term(s):
    # sqrt(2/pi) exp(-s^2/2) / erf(s/sqrt 2)
    return _SQRT_2_OVER_PI * np.exp(-0.5 * s * s) / erf(s / np.sqrt(2.0))


def _delta_unchecked(s):
    return s * s + s ** 4 + s ** 3 * _erf_term(s)


def delta_from_sigma(sigma, manifold=None):
    """Expected squared distance to the centre, ``d log Z / d eta``.

    By the chain rule this is ``sigma^3 d(log Z)/d sigma``, which for the disk
    gives ``sigma^2 + sigma^4 + sigma^3 h(sigma)`` with
    ``h = sqrt(2/pi) exp(-sigma^2/2) / erf(sigma/sqrt 2)``.
    """
    _require_disk(manifold)
    return _delta_unchecked(_check_sigma(sigma))


DELTA_MIN = float(delta_from_sigma(SIGMA_MIN))
DELTA_MAX = float(delta_from_sigma(SIGMA_MAX))

_GRID_SIGMA = np.geomspace(SIGMA_MIN, SIGMA_MAX, 400)
_GRID_LOG_DELTA = np.log(delta_from_sigma(_GRID_SIGMA))


def _delta_scalar(s):
    return s * s + s ** 4 + s ** 3 * _SQRT_2_OVER_PI * math.exp(-0.5 * s * s) / math.erf(s / _SQRT2)


def _invert_one(d, s):
    """Newton on a scalar, bisection if Newton has not converged in 12 steps."""
    s = min(max(float(s), SIGMA_MIN), SIGMA_MAX)
    for _ in range(12):
        resid = _delta_scalar(s) - d
        if abs(resid) <= 1e-13 * d:
            return s
        h = _SQRT_2_OVER_PI * math.exp(-0.5 * s * s) / math.erf(s / _SQRT2)
        slope = 2 * s + 4 * s ** 3 + 3 * s * s * h - s ** 3 * (s * h + h * h)
        s = min(max(s - resid / slope, SIGMA_MIN), SIGMA_MAX)
    lo, hi = SIGMA_MIN, SIGMA_MAX
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _delta_scalar(mid) > d:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def sigma_from_delta(delta, manifold=None, guess=None):
    """Invert :func:`delta_from_sigma` on ``[SIGMA_MIN, SIGMA_MAX]``.

    Newton iterations from ``guess`` (or a log-grid interpolation); bisection
    takes over for any entry that fails to reach ``1e-13`` relative residual.
    """
    _require_disk(manifold)
    d = np.asarray(delta, dtype=float)
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise ValueError("delta must be positive and finite")
    if np.any(d < DELTA_MIN * (1 - 1e-12)) or np.any(d > DELTA_MAX * (1 + 1e-12)):
        raise ValueError(
            f"delta outside the supported range [{DELTA_MIN:.3g}, {DELTA_MAX:.3g}]")
    d = np.clip(d, DELTA_MIN, DELTA_MAX)
    if guess is None:
        s0 = np.interp(np.log(d), _GRID_LOG_DELTA, _GRID_SIGMA)
    else:
        s0 = np.broadcast_to(np.asarray(guess, dtype=float), d.shape)
    s = np.array([_invert_one(di, si) for di, si in zip(d.ravel(), s0.ravel())]).reshape(d.shape)
    return s[()] if s.ndim == 0 else s


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RiemannianGaussian:
    """Isotropic Gaussian on a Hadamard manifold.

    ``delta`` is derived from ``sigma`` on construction so the two never drift
    apart. Use :meth:`from_delta` when the expected squared distance is the
    quantity at hand.
    """

    center: object
    sigma: float
    manifold: object = field(default_factory=PoincareDisk)
    delta: float = field(init=False)

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        center = self.manifold.validate(self.center)
        if isinstance(self.manifold, PoincareDisk):
            center = complex(center)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "delta", float(delta_from_sigma(self.sigma, self.manifold)))

    @classmethod
    def from_delta(cls, center, delta, manifold=None):
        manifold = PoincareDisk() if manifold is None else manifold
        return cls(center, float(sigma_from_delta(delta, manifold)), manifold)

    @property
    def eta(self):
        return -1.0 / (2.0 * self.sigma ** 2)

    def log_density(self, y):
        return log_density(self, y)

    def sample(self, rng_seed, n):
        return sample_gaussian(self, rng_seed, n)


def log_density(g, y):
    """``-d(y, c)^2 / (2 sigma^2) - log Z(sigma)``, vectorized over ``y``."""
    d2 = g.manifold.dist2(g.center, y)
    out = -d2 / (2.0 * g.sigma ** 2) - log_normalizer(g.sigma, g.manifold)
    return out[()] if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# sampling: geodesic polar coordinates around the centre


def radial_log_pdf(r, sigma):
    """Unnormalized log density of ``r = d(y, c)``: ``exp(-r^2/2s^2) sinh r``."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return -0.5 * (r / sigma) ** 2 + r + np.log1p(-np.exp(-2.0 * r)) - np.log(2.0)


@lru_cache(maxsize=64)
def _radial_inverse_cdf(sigma):
    # the radial law is close to N(sigma^2, sigma^2) for large sigma and to a
    # Rayleigh(sigma) near zero; this range holds all but ~1e-30 of the mass
    r_max = sigma * sigma + 12.0 * sigma
    r = np.linspace(0.0, r_max, N_KNOTS)
    logp = radial_log_pdf(r, sigma)
    p = np.exp(logp - logp[np.isfinite(logp)].max())
    p[0] = 0.0
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(r))])
    cdf /= cdf[-1]
    cdf, idx = np.unique(cdf, return_index=True)
    return PchipInterpolator(cdf, r[idx])


def radii_from_uniforms(sigma, u):
    """Map uniforms on [0, 1) to radii with the Riemannian Gaussian radial law."""
    return _radial_inverse_cdf(float(sigma))(np.asarray(u, dtype=float))


def points_from_uniforms(g, u_radius, u_angle):
    """Draws from ``g`` given independent uniforms for radius and angle."""
    _require_disk(g.manifold)
    r = radii_from_uniforms(g.sigma, u_radius)
    theta = 2.0 * np.pi * np.asarray(u_angle, dtype=float)
    w = np.tanh(r / 2.0) * np.exp(1j * theta)
    # keep draws strictly inside the disk
    w = np.where(np.abs(w) < 1.0 - 1e-12, w, w * (1.0 - 1e-12) / np.abs(w))
    return g.manifold.translate(g.center, w)


def sample_gaussian(g, rng_seed, n):
    """``n`` i.i.d. draws from ``g``; deterministic for a given seed."""
    _require_disk(g.manifold)
    rng = np.random.Generator(np.random.Philox(rng_seed))
    u = rng.random((2, n))
    return points_from_uniforms(g, u[0], u[1])
