"""Constant-memory online estimation of an HMM with Riemannian Gaussian emissions.

Each new observation ``y`` goes through one step of

1. a scaled forward recursion ``alpha <- normalize((alpha^T A) * p(y))``,
2. a backward pass over the last ``window_size`` observations giving the
   smoothed marginals ``gamma`` and pair probabilities ``zeta``,
3. a Fisher-scored update of the transition matrix built from ``zeta``,
4. stochastic-approximation updates of the centres (geodesic interpolation
   toward ``y``) and of the expected squared distances ``delta``.

Nothing older than the window is retained, so memory is O(window_size * N)
whatever the stream length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .gaussian import (DELTA_MAX, DELTA_MIN, RiemannianGaussian, _log_normalizer_unchecked,
                       log_normalizer, sigma_from_delta)
from .markov import HmmParams, validate, InvalidParamsError
from .manifold import PoincareDisk, disk_dist, disk_geodesic

PROJECTION_EPS = 1e-6
ZETA_FLOOR = 1e-300


class NumericalError(ArithmeticError):
    """A probability normalizer vanished or an update became non-finite."""


class DegenerateEmissionError(NumericalError):
    pass


@dataclass
class FilterState:
    """The whole memory of the online filter.

    Observations and the forward vectors computed when they arrived are kept
    in ring buffers of length ``window_size``; ``peak_retained`` records the
    largest number of observations ever held.
    """

    manifold: object
    transition: np.ndarray
    initial: np.ndarray
    centers: np.ndarray
    deltas: np.ndarray
    window_size: int
    step_exponent: float = 0.5
    alpha: np.ndarray = None
    gamma_cumsum: np.ndarray = None
    k: int = 0
    log_scale: float = 0.0
    peak_retained: int = 0
    sigmas: np.ndarray = field(init=False)
    _obs: np.ndarray = field(init=False, repr=False)
    _alpha_buf: np.ndarray = field(init=False, repr=False)
    _start: int = field(default=0, init=False, repr=False)
    _count: int = field(default=0, init=False, repr=False)

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be positive")
        n = len(self.initial)
        self.transition = np.array(self.transition, dtype=float)
        self.initial = np.array(self.initial, dtype=float)
        self.deltas = np.clip(np.array(self.deltas, dtype=float), DELTA_MIN, None)
        self.sigmas = np.atleast_1d(sigma_from_delta(self.deltas, self.manifold))
        if isinstance(self.manifold, PoincareDisk):
            self.centers = np.array(self.centers, dtype=complex).reshape(n)
            self._obs = np.zeros(self.window_size, dtype=complex)
        else:
            self.centers = np.array(self.centers, dtype=float)
            d = self.manifold.dim
            self._obs = np.zeros((self.window_size, d, d))
        self._alpha_buf = np.zeros((self.window_size, n))
        if self.gamma_cumsum is None:
            self.gamma_cumsum = np.zeros(n)

    @classmethod
    def from_params(cls, params, window_size, step_exponent=0.5):
        problems = validate(params)
        if problems:
            raise InvalidParamsError(problems)
        return cls(params.manifold, params.transition, params.initial,
                   np.array(params.centers), params.deltas, window_size, step_exponent)

    @property
    def n_states(self):
        return len(self.initial)

    @property
    def params(self):
        comps = [RiemannianGaussian(c, s, self.manifold) for c, s in zip(self.centers, self.sigmas)]
        return HmmParams(self.transition, self.initial, comps)

    @property
    def n_retained(self):
        return self._count

    def _order(self):
        return (self._start + np.arange(self._count)) % self.window_size

    def window_observations(self):
        return self._obs[self._order()]

    def window_alpha(self):
        return self._alpha_buf[self._order()]

    def push(self, y, alpha):
        """Append ``(y, alpha)``, dropping the oldest entry once the window is full."""
        if self._count < self.window_size:
            pos = (self._start + self._count) % self.window_size
            self._count += 1
        else:
            pos = self._start
            self._start = (self._start + 1) % self.window_size
        self._obs[pos] = y
        self._alpha_buf[pos] = alpha
        self.peak_retained = max(self.peak_retained, self._count)

    def set_deltas(self, deltas):
        self.deltas = np.asarray(deltas, dtype=float)
        self.sigmas = np.atleast_1d(sigma_from_delta(self.deltas, self.manifold, guess=self.sigmas))

    def snapshot(self):
        m = self.manifold
        return {
            "k": int(self.k),
            "A": self.transition.tolist(),
            "centers": [m.to_json(c) for c in self.centers],
            "sigmas": self.sigmas.tolist(),
            "deltas": self.deltas.tolist(),
        }


@dataclass
class SmoothingSlice:
    """Window-level smoothing output.

    ``beta`` and ``gamma`` have one row per retained observation (oldest
    first); ``zeta`` is the pair probability for the two most recent steps,
    ``zeta_sum`` its sum over all consecutive pairs in the window.
    """

    beta: np.ndarray
    gamma: np.ndarray
    zeta: np.ndarray
    zeta_sum: np.ndarray
    mu: np.ndarray
    g: np.ndarray


def log_emissions(state, y):
    """``log p_i(y)`` under the current parameters, shape ``y.shape + (N,)``."""
    m = state.manifold
    if isinstance(m, PoincareDisk):
        # observations are validated on entry to the filter
        d2 = disk_dist(np.asarray(y)[..., None], state.centers) ** 2
        return -d2 / (2.0 * state.sigmas ** 2) - _log_normalizer_unchecked(state.sigmas)
    d2 = m.dist2(state.centers, np.asarray(y)[..., None, :, :])
    return -d2 / (2.0 * state.sigmas ** 2) - log_normalizer(state.sigmas, m)


def forward_step(state, y):
    """Advance the normalized forward vector by one observation.

    Updates ``state.alpha`` and ``state.log_scale`` in place and returns the
    new ``alpha``. When no observation has been seen the initial
    distribution plays the role of ``alpha^T A``.
    """
    logp = log_emissions(state, y)
    shift = np.max(logp)
    if not np.isfinite(shift):
        raise DegenerateEmissionError("every emission density underflowed")
    prior = state.initial if state.alpha is None else state.alpha @ state.transition
    a = prior * np.exp(logp - shift)
    s = a.sum()
    if not (s > 0 and np.isfinite(s)):
        raise DegenerateEmissionError("forward vector vanished")
    state.alpha = a / s
    state.log_scale += np.log(s) + shift
    return state.alpha


def slide_window(state, y):
    state.push(y, state.alpha)


@njit(cache=True)
def _smooth_window(alpha, dens, A):
    n, N = alpha.shape
    beta = np.empty((n, N))
    gamma = np.empty((n, N))
    zeta_sum = np.zeros((N, N))
    zeta_last = np.zeros((N, N))
    ok = True
    for i in range(N):
        beta[n - 1, i] = 1.0
    for t in range(n - 1, -1, -1):
        if t < n - 1:
            # beta_t = A (p_{t+1} * beta_{t+1}), rescaled
            tot = 0.0
            for i in range(N):
                acc = 0.0
                for j in range(N):
                    acc += A[i, j] * dens[t + 1, j] * beta[t + 1, j]
                beta[t, i] = acc
                tot += acc
            if not tot > 0.0:
                ok = False
                tot = 1.0
            for i in range(N):
                beta[t, i] /= tot
            # zeta_t(i, j) ~ alpha_t(i) A_ij p_j(y_{t+1}) beta_{t+1}(j)
            ztot = 0.0
            for i in range(N):
                for j in range(N):
                    ztot += alpha[t, i] * A[i, j] * dens[t + 1, j] * beta[t + 1, j]
            if not ztot > 0.0:
                ok = False
                ztot = 1.0
            for i in range(N):
                for j in range(N):
                    z = alpha[t, i] * A[i, j] * dens[t + 1, j] * beta[t + 1, j] / ztot
                    zeta_sum[i, j] += z
                    if t == n - 2:
                        zeta_last[i, j] = z
        gtot = 0.0
        for i in range(N):
            gtot += alpha[t, i] * beta[t, i]
        if not gtot > 0.0:
            ok = False
            gtot = 1.0
        for i in range(N):
            gamma[t, i] = alpha[t, i] * beta[t, i] / gtot
    return beta, gamma, zeta_sum, zeta_last, ok


def backward_window(state):
    """Smooth over the retained window with the current parameters.

    Returns
    -------
    SmoothingSlice
        ``mu[i, j] = sum_t zeta_t(i, j) / A_ij^2`` over the window pairs and
        ``g[i, j] = zeta_last(i, j) / A_ij``.

    Raises
    ------
    NumericalError
        If a normalizer of ``beta``, ``gamma`` or ``zeta`` is zero.
    """
    if state.n_retained < 1:
        raise ValueError("empty window")
    obs = state.window_observations()
    logp = log_emissions(state, obs)
    logp = logp - logp.max(axis=1, keepdims=True)
    dens = np.exp(logp)
    A = state.transition
    beta, gamma, zeta_sum, zeta_last, ok = _smooth_window(state.window_alpha(), dens, A)
    if not ok:
        raise NumericalError("zero normalizer in window smoothing")
    if state.n_retained == 1 and state.n_states == 1:
        zeta_last = zeta_sum = np.ones((1, 1))
    mu = np.maximum(zeta_sum, ZETA_FLOOR) / A ** 2
    g = zeta_last / A
    return SmoothingSlice(beta, gamma, zeta_last, zeta_sum, mu, g)


def transition_correction(mu, g):
    """Per-entry increment before projection; each row has zero ``1/mu``-weighted mean."""
    inv = 1.0 / mu
    centre = np.sum(g * inv, axis=1, keepdims=True) / np.sum(inv, axis=1, keepdims=True)
    return inv * (g - centre)


def project_rows(A, eps=PROJECTION_EPS):
    A = np.clip(A, eps, 1.0)
    return A / A.sum(axis=1, keepdims=True)


def update_transition(state, slice_, eps=PROJECTION_EPS):
    new = state.transition + transition_correction(slice_.mu, slice_.g)
    if not np.all(np.isfinite(new)):
        bad = list(zip(*np.nonzero(~np.isfinite(new))))
        raise NumericalError(f"non-finite transition update at {bad}")
    state.transition = project_rows(new, eps)
    return state.transition


def update_mean(state, slice_, y):
    """Move each centre toward ``y`` by ``tau_i = gamma_i / cumulative gamma_i``."""
    gamma = slice_.gamma[-1]
    state.gamma_cumsum = state.gamma_cumsum + gamma
    safe = np.where(state.gamma_cumsum > 0, state.gamma_cumsum, 1.0)
    tau = np.where(state.gamma_cumsum > 0, gamma / safe, 0.0)
    if np.any(tau < 0) or np.any(tau > 1 + 1e-12):
        raise NumericalError(f"interpolation weights {tau} outside [0, 1]")
    tau = np.clip(tau, 0.0, 1.0)
    m = state.manifold
    if isinstance(m, PoincareDisk):
        state.centers = disk_geodesic(state.centers, y, tau)
    else:
        state.centers = m.geodesic(state.centers, np.broadcast_to(y, state.centers.shape), tau)
    return state.centers


def update_delta(state, slice_, y, centers=None):
    """``delta_i += gamma_i (d(y, c_i)^2 - delta_i) / k^step_exponent``.

    ``centers`` defaults to the state's current centres; pass the centres
    from before the mean update to follow the rule literally.
    """
    if state.k < 1:
        raise ValueError("update_delta needs k >= 1")
    c = state.centers if centers is None else centers
    m = state.manifold
    if isinstance(m, PoincareDisk):
        d2 = disk_dist(c, y) ** 2
    else:
        d2 = m.dist2(c, np.broadcast_to(y, c.shape))
    gamma = slice_.gamma[-1]
    new = state.deltas + gamma * (d2 - state.deltas) / state.k ** state.step_exponent
    if not np.all(np.isfinite(new)):
        raise NumericalError("non-finite delta update")
    new = np.maximum(new, DELTA_MIN)
    if np.any(new > DELTA_MAX):
        raise NumericalError(f"delta {new.max():.4g} beyond the invertible range")
    state.set_deltas(new)
    return state.deltas


def online_step(state, y):
    """Process one observation; returns the filtered posterior of its state."""
    y = state.manifold.validate(y)
    forward_step(state, y)
    slide_window(state, y)
    sl = backward_window(state)
    old_centers = state.centers.copy()
    update_transition(state, sl)
    update_mean(state, sl, y)
    update_delta(state, sl, y, centers=old_centers)
    state.k += 1
    return sl.gamma[-1]


@dataclass
class OnlineResult:
    params: HmmParams
    gamma_filtered: np.ndarray
    trace: list
    peak_retained: int
    log_likelihood: float


def run_online(state, stream, trace_every=0, trace_path=None):
    """Run the filter over ``stream``, mutating ``state``.

    Parameters
    ----------
    state : FilterState
        Typically produced by :func:`hadamard_hmm.kmeans.seed_filter`.
    stream : array of points
    trace_every : int
        Record a snapshot every this many steps (0 disables tracing).
    trace_path : path, optional
        Write the snapshots as JSON lines.

    Returns
    -------
    OnlineResult
        Final parameters and the filtered ``gamma_{t|t}`` for each stream
        element.
    """
    n = len(stream)
    gammas = np.empty((n, state.n_states))
    trace = []
    fh = open(trace_path, "w", encoding="utf-8") if trace_path else None
    try:
        for t in range(n):
            gammas[t] = online_step(state, stream[t])
            if trace_every and (t + 1) % trace_every == 0:
                rec = state.snapshot()
                rec["gamma_filtered"] = gammas[t].tolist()
                trace.append(rec)
                if fh:
                    fh.write(json.dumps(rec) + "\n")
    finally:
        if fh:
            fh.close()
    return OnlineResult(state.params, gammas, trace, state.peak_retained, state.log_scale)
