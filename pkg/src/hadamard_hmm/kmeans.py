"""Riemannian K-means initialization of the online filter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussian import DELTA_MAX, DELTA_MIN, RiemannianGaussian
from .manifold import SPD, PoincareDisk, karcher_mean
from .markov import HmmParams, InvalidParamsError, validate
from .online import FilterState, forward_step, slide_window


class KMeansError(ValueError):
    pass


@dataclass
class KMeansResult:
    """Cluster labels (0-indexed), centres and the final inertia.

    ``history`` holds the inertia after every Lloyd iteration.
    """

    assignments: np.ndarray
    centers: np.ndarray
    inertia: float
    history: list = field(default_factory=list)
    n_iter: int = 0


def _pairwise_dist2(manifold, data, centers):
    if isinstance(manifold, PoincareDisk):
        return manifold.dist2(data[:, None], centers[None, :])
    return manifold.dist2(centers[None], data[:, None])


def _plusplus_seeds(manifold, data, k, rng):
    """k-means++ seeding: each new centre drawn with probability proportional to d^2."""
    idx = [int(rng.integers(len(data)))]
    best = _pairwise_dist2(manifold, data, data[idx])[:, 0]
    for _ in range(1, k):
        total = best.sum()
        if total > 0:
            nxt = int(rng.choice(len(data), p=best / total))
        else:
            nxt = int(np.argmax(best))
        idx.append(nxt)
        best = np.minimum(best, _pairwise_dist2(manifold, data, data[[nxt]])[:, 0])
    return data[idx].copy()


def _n_distinct(manifold, data, k):
    """Count distinct points, stopping as soon as ``k`` have been seen."""
    reps = []
    for x in data:
        if all(manifold.dist(x, r) > 0 for r in reps):
            reps.append(x)
            if len(reps) >= k:
                break
    return len(reps)


def kmeans_fit(data, n_clusters, manifold=None, rng_seed=0, max_iter=100, tol=1e-10, init=None,
               n_init=10):
    """Lloyd iterations with Karcher-mean centres.

    Parameters
    ----------
    data : array of points
    n_clusters : int
    manifold : PoincareDisk or SPD, optional
        Defaults to the Poincaré disk for complex data.
    rng_seed : int
        Seeds the k-means++ draws.
    max_iter, tol
        Stop after ``max_iter`` iterations or once the inertia improves by
        less than ``tol``.
    init : array of points, optional
        Initial centres; overrides k-means++ seeding.
    n_init : int
        Number of k-means++ restarts; the lowest-inertia result is
        returned. Ignored when ``init`` is given.

    Returns
    -------
    KMeansResult
    """
    if manifold is None:
        arr = np.asarray(data)
        manifold = PoincareDisk() if arr.ndim == 1 else SPD(arr.shape[-1])
    data = manifold.stack(data)
    n = len(data)
    if n_clusters < 1:
        raise KMeansError("n_clusters must be positive")
    if n < n_clusters:
        raise KMeansError(f"{n} points for {n_clusters} clusters")
    if _n_distinct(manifold, data, n_clusters) < n_clusters:
        raise KMeansError(f"fewer than {n_clusters} distinct points")

    if init is not None:
        return _lloyd(manifold, data, manifold.stack(init).copy(), max_iter, tol)
    rng = np.random.default_rng(rng_seed)
    best = None
    for _ in range(max(1, n_init)):
        res = _lloyd(manifold, data, _plusplus_seeds(manifold, data, n_clusters, rng), max_iter, tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def _lloyd(manifold, data, centers, max_iter, tol):
    n = len(data)
    n_clusters = len(centers)
    history = []
    labels = None
    inertia = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _pairwise_dist2(manifold, data, centers)
        labels = np.argmin(d2, axis=1)
        counts = np.bincount(labels, minlength=n_clusters)
        for c in np.nonzero(counts == 0)[0]:
            # move the empty centre onto the worst-served point
            own = d2[np.arange(n), labels]
            far = int(np.argmax(own))
            centers[c] = data[far]
            d2 = _pairwise_dist2(manifold, data, centers)
            labels = np.argmin(d2, axis=1)
        counts = np.bincount(labels, minlength=n_clusters)
        if np.any(counts == 0):
            raise KMeansError("could not repopulate an empty cluster")
        for c in range(n_clusters):
            centers[c] = karcher_mean(data[labels == c], manifold=manifold, init=centers[c])
        new_inertia = float(np.sum(_pairwise_dist2(manifold, data, centers)[np.arange(n), labels]))
        history.append(new_inertia)
        improved = inertia - new_inertia
        inertia = new_inertia
        if improved < tol:
            break
    # labels consistent with the final centres
    d2 = _pairwise_dist2(manifold, data, centers)
    final = np.argmin(d2, axis=1)
    if np.all(np.bincount(final, minlength=n_clusters) > 0):
        labels = final
        inertia = float(np.sum(d2[np.arange(n), labels]))
    return KMeansResult(labels, centers, inertia, history, it)


def count_transitions(labels, n_states, smoothing=0.5):
    """Row-normalized transition counts with ``smoothing`` pseudo-counts per entry."""
    labels = np.asarray(labels)
    counts = np.zeros((n_states, n_states))
    np.add.at(counts, (labels[:-1], labels[1:]), 1.0)
    counts += smoothing
    rows = counts.sum(axis=1, keepdims=True)
    if np.any(rows == 0):
        empty = np.nonzero(rows[:, 0] == 0)[0].tolist()
        raise KMeansError(f"clusters {empty} have no outgoing transitions")
    return counts / rows


def estimate_initial_params(data, result, manifold=None, smoothing=0.5):
    """Turn a clustering of a chain prefix into HMM parameters.

    Transitions are counted between consecutive labels, each centre becomes a
    component mean and the within-cluster mean squared distance becomes its
    ``delta``. The initial distribution is the smoothed label frequency.
    """
    manifold = PoincareDisk() if manifold is None else manifold
    data = manifold.stack(data)
    labels = np.asarray(result.assignments)
    n = len(result.centers)
    counts = np.bincount(labels, minlength=n)
    missing = np.nonzero(counts == 0)[0]
    if len(missing):
        raise KMeansError(f"clusters {[int(m) + 1 for m in missing]} have no members")
    A = count_transitions(labels, n, smoothing)
    comps = []
    for i in range(n):
        d2 = manifold.dist2(result.centers[i], data[labels == i])
        delta = float(np.clip(np.mean(d2), DELTA_MIN, DELTA_MAX))
        comps.append(RiemannianGaussian.from_delta(result.centers[i], delta, manifold))
    pi = (counts + smoothing) / (counts.sum() + n * smoothing)
    return HmmParams(A, pi, comps)


def seed_filter(params, observations, window_size=None, step_exponent=0.5, return_gamma=False):
    """Build the online filter's memory from the initialization data.

    The forward recursion is run over ``observations`` with ``params`` held
    fixed; the last ``window_size`` observations (all of them by default)
    and their forward vectors stay in the window, and the filtered
    posteriors seed the cumulative ``gamma`` sums.
    """
    problems = validate(params)
    if problems:
        raise InvalidParamsError(problems)
    window_size = len(observations) if window_size is None else window_size
    state = FilterState.from_params(params, window_size, step_exponent)
    gammas = np.empty((len(observations), params.n_states))
    for t, y in enumerate(observations):
        gammas[t] = forward_step(state, y)
        slide_window(state, y)
    state.gamma_cumsum = gammas.sum(axis=0)
    state.k = len(observations)
    if return_gamma:
        return state, gammas
    return state
