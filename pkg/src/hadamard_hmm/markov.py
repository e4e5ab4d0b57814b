"""HMM parameters and a ground-truth chain simulator."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .gaussian import RiemannianGaussian, points_from_uniforms
from .manifold import SPD, ManifoldError, PoincareDisk

PROB_TOL = 1e-9


class InvalidParamsError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class HmmParams:
    """Transition matrix, initial distribution and one Gaussian per state.

    States are 0-indexed in arrays; files use 1-indexed labels.
    """

    transition: np.ndarray
    initial: np.ndarray
    components: tuple

    def __post_init__(self):
        object.__setattr__(self, "transition", np.array(self.transition, dtype=float))
        object.__setattr__(self, "initial", np.array(self.initial, dtype=float))
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def n_states(self):
        return len(self.components)

    @property
    def manifold(self):
        return self.components[0].manifold

    @property
    def centers(self):
        return [g.center for g in self.components]

    @property
    def sigmas(self):
        return np.array([g.sigma for g in self.components])

    @property
    def deltas(self):
        return np.array([g.delta for g in self.components])

    def permuted(self, perm):
        """Relabel states: new state ``i`` is old state ``perm[i]``."""
        perm = np.asarray(perm)
        return HmmParams(self.transition[np.ix_(perm, perm)], self.initial[perm],
                         [self.components[p] for p in perm])

    def to_json(self):
        m = self.manifold
        kind = {"type": "poincare_disk"} if isinstance(m, PoincareDisk) else {"type": "spd", "dim": m.dim}
        return {
            "manifold": kind,
            "n_states": self.n_states,
            "transition": self.transition.tolist(),
            "initial": self.initial.tolist(),
            "components": [
                {"center": m.to_json(g.center), "sigma": g.sigma, "delta": g.delta}
                for g in self.components
            ],
        }

    @classmethod
    def from_json(cls, obj):
        kind = obj.get("manifold", {"type": "poincare_disk"})
        if kind["type"] == "poincare_disk":
            m = PoincareDisk()
        elif kind["type"] == "spd":
            m = SPD(int(kind["dim"]))
        else:
            raise ManifoldError(f"unknown manifold type {kind['type']!r}")
        comps = []
        for c in obj["components"]:
            center = m.from_json(c["center"])
            if "sigma" in c:
                comps.append(RiemannianGaussian(center, c["sigma"], m))
            else:
                comps.append(RiemannianGaussian.from_delta(center, c["delta"], m))
        params = cls(obj["transition"], obj["initial"], comps)
        problems = validate(params)
        if problems:
            raise InvalidParamsError(problems)
        return params

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def validate(params):
    """Return a list of invariant violations (empty when ``params`` is valid)."""
    problems = []
    n = len(params.components)
    A = np.asarray(params.transition, dtype=float)
    pi = np.asarray(params.initial, dtype=float)
    if n == 0:
        problems.append("no components")
    if A.shape != (n, n):
        problems.append(f"transition has shape {A.shape}, expected {(n, n)}")
    else:
        if not np.all(np.isfinite(A)):
            problems.append("transition has non-finite entries")
        for i, j in zip(*np.nonzero((A < 0) | (A > 1))):
            problems.append(f"transition[{i},{j}] = {A[i, j]} outside [0, 1]")
        for i, s in enumerate(A.sum(axis=1)):
            if abs(s - 1.0) > PROB_TOL:
                problems.append(f"transition row {i} sums to {s}")
    if pi.shape != (n,):
        problems.append(f"initial has shape {pi.shape}, expected {(n,)}")
    else:
        for i in np.nonzero((pi < 0) | (pi > 1))[0]:
            problems.append(f"initial[{i}] = {pi[i]} outside [0, 1]")
        if abs(pi.sum() - 1.0) > PROB_TOL:
            problems.append(f"initial sums to {pi.sum()}")
    kinds = set()
    for i, g in enumerate(params.components):
        sigma = getattr(g, "sigma", None)
        if sigma is None or not np.isfinite(sigma) or sigma <= 0:
            problems.append(f"component {i} has invalid sigma {sigma}")
        m = getattr(g, "manifold", None)
        kinds.add(m)
        if m is not None and not m.is_point(g.center):
            problems.append(f"component {i} center is not a valid point")
    if len(kinds) > 1:
        problems.append("components live on different manifolds")
    return problems


@dataclass
class ChainSample:
    """Hidden states (0-indexed) and the observations they emitted."""

    states: np.ndarray
    observations: np.ndarray
    manifold: object

    def __post_init__(self):
        if len(self.states) != len(self.observations) or len(self.states) < 1:
            raise ValueError("states and observations must have equal, nonzero length")

    def __len__(self):
        return len(self.states)

    def to_csv(self, path):
        m = self.manifold
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["t", "state", *m.coord_names()])
            for t, (s, y) in enumerate(zip(self.states, self.observations), start=1):
                w.writerow([t, int(s) + 1, *(repr(float(v)) for v in m.coords(y))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        if not rows:
            raise ValueError(f"{path}: empty file")
        header = rows[0]
        if header[:2] != ["t", "state"]:
            raise ValueError(f"{path}: expected header starting with t,state")
        ncoord = len(header) - 2
        if header[2:] == ["re", "im"]:
            m = PoincareDisk()
        else:
            d = int(round(np.sqrt(ncoord)))
            if d * d != ncoord:
                raise ValueError(f"{path}: cannot infer manifold from {ncoord} coordinates")
            m = SPD(d)
        states, obs = [], []
        for row in rows[1:]:
            if not row:
                continue
            # unknown states may be left blank
            states.append(int(row[1]) - 1 if row[1] else -1)
            obs.append(m.from_coords([float(v) for v in row[2:]]))
        return cls(np.array(states, dtype=int), m.stack(obs), m)


def rng_streams(seed):
    """Independent counter-based generators for the chain and its emissions."""
    chain_ss, emit_ss = np.random.SeedSequence(seed).spawn(2)
    return (np.random.Generator(np.random.Philox(chain_ss)),
            np.random.Generator(np.random.Philox(emit_ss)))


def simulate_states(params, length, rng):
    cum_pi = np.cumsum(params.initial)
    cum_A = np.cumsum(params.transition, axis=1)
    u = rng.random(length)
    states = np.empty(length, dtype=int)
    n = params.n_states
    s = min(int(np.searchsorted(cum_pi, u[0], side="right")), n - 1)
    states[0] = s
    for t in range(1, length):
        s = min(int(np.searchsorted(cum_A[s], u[t], side="right")), n - 1)
        states[t] = s
    return states


def simulate_emissions(params, states, rng):
    """One observation per state; draw ``t`` only uses uniforms ``2t, 2t+1``."""
    u = rng.random((len(states), 2))
    out = np.empty(len(states), dtype=complex)
    for i, g in enumerate(params.components):
        mask = states == i
        if np.any(mask):
            out[mask] = points_from_uniforms(g, u[mask, 0], u[mask, 1])
    return out


def simulate_chain(params, length, rng_seed):
    """Sample a hidden state path and its observations.

    Parameters
    ----------
    params : HmmParams
    length : int
        Number of time steps ``T >= 1``.
    rng_seed : int
        Seed; the same seed always gives the same sample, and the first ``t``
        steps do not depend on ``length``.

    Returns
    -------
    ChainSample
    """
    problems = validate(params)
    if problems:
        raise InvalidParamsError(problems)
    if length < 1:
        raise ValueError("length must be at least 1")
    chain_rng, emit_rng = rng_streams(rng_seed)
    states = simulate_states(params, length, chain_rng)
    obs = simulate_emissions(params, states, emit_rng)
    return ChainSample(states, obs, params.manifold)


def stationary_distribution(A):
    w, v = np.linalg.eig(np.asarray(A, dtype=float).T)
    p = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return p / p.sum()


def disk_example_params():
    """Three-state model on the Poincaré disk used as the reference experiment."""
    A = [[0.4, 0.3, 0.3],
         [0.2, 0.6, 0.2],
         [0.1, 0.1, 0.8]]
    comps = [RiemannianGaussian(0j, 0.2),
             RiemannianGaussian(0.29 + 0.82j, 1.0),
             RiemannianGaussian(-0.29 + 0.82j, 1.0)]
    return HmmParams(A, [1.0, 0.0, 0.0], comps)
