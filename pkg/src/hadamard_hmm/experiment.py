"""Simulation experiments: initialize, fine-tune, decode and score.

A run for minibatch size ``delta`` and seed ``s``

1. simulates a chain from the true parameters with seed ``s``,
2. clusters the first ``delta`` observations with Riemannian K-means and
   turns the clusters into initial parameters,
3. seeds the online filter on that prefix and runs it over the rest,
4. decodes every time step by the argmax of its filtered posterior and
   scores the result against the hidden states.

Accuracy is the fraction of correctly decoded states under the best
relabeling of the estimated states; the transition error is the Frobenius
norm of the difference between the relabeled estimate and the truth.
The "K-means only" row is the same pipeline with the whole chain used for
initialization, so no fine-tuning step runs.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .kmeans import estimate_initial_params, kmeans_fit, seed_filter
from .manifold import PoincareDisk
from .markov import HmmParams, disk_example_params, simulate_chain
from .online import run_online

logger = logging.getLogger(__name__)

METRICS_HEADER = ["delta", "seed", "accuracy", "runtime_s", "a11", "a22", "a33", "transition_rmse"]
KMEANS_ONLY = "kmeans"

# Published results for the reference experiment, kept for side-by-side
# display only. The EM row comes from a batch algorithm that is not
# implemented here.
PUBLISHED_TABLE = [
    # label, accuracy, runtime_s, a11, a22, a33, transition_rmse
    ("true", None, None, 0.4, 0.6, 0.8, 0.0),
    ("40", 0.48, 1.37, 0.40, 0.30, 0.40, 1.49),
    ("60", 0.50, 1.93, 0.31, 0.34, 0.28, 1.39),
    ("80", 0.76, 2.54, 0.36, 0.49, 0.45, 1.26),
    ("100", 0.86, 3.21, 0.48, 0.63, 0.59, 1.13),
    ("200", 0.98, 5.81, 0.46, 0.60, 0.77, 1.12),
    ("300", 0.94, 8.39, 0.57, 0.63, 0.75, 0.95),
    ("1000", 0.95, 28.58, 0.51, 0.64, 0.76, 0.94),
    ("5000", 0.95, 70.69, 0.41, 0.58, 0.70, 0.91),
    ("kmeans", 0.90, 4.99, 0.53, 0.65, 0.56, 0.93),
    ("em", 0.90, 2623.69, 0.31, 0.88, 0.96, 1.29),
]


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scoring


def decode_states(gamma_filtered):
    """Most probable state per time step; ties go to the lowest index."""
    return np.argmax(np.asarray(gamma_filtered), axis=1)


def best_permutation(decoded, truth, n_states=None):
    """Relabeling ``perm`` (estimated -> true) maximizing agreement, and that agreement."""
    decoded = np.asarray(decoded)
    truth = np.asarray(truth)
    if decoded.shape != truth.shape:
        raise ValueError(f"length mismatch: {decoded.shape} vs {truth.shape}")
    if n_states is None:
        n_states = int(max(decoded.max(initial=0), truth.max(initial=0))) + 1
    # confusion[i, j]: estimated i, true j
    confusion = np.zeros((n_states, n_states))
    np.add.at(confusion, (decoded, truth), 1.0)
    best, best_perm = -1.0, None
    for perm in itertools.permutations(range(n_states)):
        hits = confusion[np.arange(n_states), perm].sum()
        if hits > best:
            best, best_perm = hits, perm
    return np.array(best_perm), best / max(len(truth), 1)


def accuracy(decoded, truth, n_states=None):
    """Fraction of agreeing labels, maximized over relabelings of ``decoded``."""
    return float(best_permutation(decoded, truth, n_states)[1])


def align_transition(A, perm):
    """Express an estimated transition matrix in the true labelling."""
    A = np.asarray(A)
    out = np.empty_like(A)
    out[np.ix_(perm, perm)] = A
    return out


def transition_rmse(estimate, truth, perm=None):
    """Frobenius norm of ``estimate - truth`` after relabeling by ``perm``."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    if perm is not None:
        estimate = align_transition(estimate, perm)
    return float(np.linalg.norm(estimate - truth))


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    true_params: HmmParams = field(default_factory=disk_example_params)
    chain_length: int = 10_000
    minibatch_sizes: list = field(default_factory=lambda: [40, 60, 80, 100, 200, 300, 1000, 5000])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    kmeans_only: bool = True
    kmeans_prefix: int | None = None
    kmeans_n_init: int = 10
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-10
    smoothing: float = 0.5
    step_exponent: float = 0.5
    trace_every: int = 0
    workers: int = 1
    output_dir: str = "."
    metrics_file: str = "metrics.csv"
    estimates_file: str = "estimates.json"
    summary_file: str = "summary.csv"
    reference_file: str = "reference.csv"

    def __post_init__(self):
        self.check()

    @property
    def n_states(self):
        return self.true_params.n_states

    @property
    def manifold(self):
        return self.true_params.manifold

    def check(self):
        if self.chain_length < 2:
            raise ConfigError("chain.length must be at least 2")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for d in self.minibatch_sizes:
            if not 2 <= d <= self.chain_length:
                raise ConfigError(f"minibatch size {d} outside [2, {self.chain_length}]")
        if self.kmeans_prefix is not None and self.kmeans_prefix < self.n_states:
            raise ConfigError("kmeans.prefix smaller than the number of states")
        if self.workers < 1:
            raise ConfigError("workers must be positive")

    def path(self, name):
        return os.path.join(self.output_dir, name)


_KEYS = {
    "params": str,
    "chain.length": int,
    "minibatch": "intlist",
    "seeds": "intlist",
    "kmeans.only": "bool",
    "kmeans.prefix": int,
    "kmeans.n_init": int,
    "kmeans.max_iter": int,
    "kmeans.tol": float,
    "kmeans.smoothing": float,
    "step_exponent": float,
    "trace_every": int,
    "workers": int,
    "output.dir": str,
    "output.metrics": str,
    "output.estimates": str,
    "output.summary": str,
    "output.reference": str,
}

_FIELD = {
    "chain.length": "chain_length",
    "minibatch": "minibatch_sizes",
    "seeds": "seeds",
    "kmeans.only": "kmeans_only",
    "kmeans.prefix": "kmeans_prefix",
    "kmeans.n_init": "kmeans_n_init",
    "kmeans.max_iter": "kmeans_max_iter",
    "kmeans.tol": "kmeans_tol",
    "kmeans.smoothing": "smoothing",
    "step_exponent": "step_exponent",
    "trace_every": "trace_every",
    "workers": "workers",
    "output.dir": "output_dir",
    "output.metrics": "metrics_file",
    "output.estimates": "estimates_file",
    "output.summary": "summary_file",
    "output.reference": "reference_file",
}


def parse_config(text, base_dir="."):
    """Parse ``key=value`` lines (``#`` starts a comment) into an ExperimentConfig.

    ``params`` names a JSON parameter file, relative to ``base_dir``; without
    it the built-in three-state disk model is used.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kind = _KEYS[key]
        try:
            if kind == "intlist":
                values[key] = [int(v) for v in val.split(",") if v.strip()]
            elif kind == "bool":
                if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(val)
                values[key] = val.lower() in ("true", "1", "yes")
            else:
                values[key] = kind(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc

    kwargs = {_FIELD[k]: v for k, v in values.items() if k in _FIELD}
    if "params" in values:
        path = values["params"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        kwargs["true_params"] = HmmParams.load(path)
    if "output_dir" in kwargs and not os.path.isabs(kwargs["output_dir"]):
        kwargs["output_dir"] = os.path.join(base_dir, kwargs["output_dir"])
    return ExperimentConfig(**kwargs)


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# running


@dataclass
class FitResult:
    params: HmmParams
    gamma_filtered: np.ndarray
    kmeans_s: float
    seed_s: float
    online_s: float
    peak_retained: int
    n_online: int

    @property
    def runtime_s(self):
        return self.kmeans_s + self.seed_s + self.online_s


def fit(observations, n_states, minibatch, manifold=None, prefix=None, rng_seed=0,
        n_init=10, max_iter=100, tol=1e-10, smoothing=0.5, step_exponent=0.5,
        trace_every=0, trace_path=None):
    """Initialize on a prefix and fine-tune online over the remaining observations.

    Parameters
    ----------
    observations : array of points
    n_states : int
    minibatch : int
        Number of observations the online filter keeps in memory.
    prefix : int, optional
        Length of the K-means prefix; defaults to ``minibatch``.

    Returns
    -------
    FitResult
    """
    manifold = PoincareDisk() if manifold is None else manifold
    observations = manifold.stack(observations)
    prefix = minibatch if prefix is None else prefix
    if not 1 <= prefix <= len(observations):
        raise ValueError(f"prefix {prefix} outside [1, {len(observations)}]")
    if minibatch > len(observations):
        raise ValueError("stream shorter than the minibatch")
    head, rest = observations[:prefix], observations[prefix:]

    t0 = time.perf_counter()
    km = kmeans_fit(head, n_states, manifold, rng_seed=rng_seed, max_iter=max_iter, tol=tol,
                    n_init=n_init)
    init = estimate_initial_params(head, km, manifold, smoothing=smoothing)
    t1 = time.perf_counter()
    state, g_head = seed_filter(init, head, window_size=minibatch, step_exponent=step_exponent,
                                return_gamma=True)
    t2 = time.perf_counter()
    res = run_online(state, rest, trace_every=trace_every, trace_path=trace_path)
    t3 = time.perf_counter()
    gamma = np.vstack([g_head, res.gamma_filtered])
    return FitResult(res.params, gamma, t1 - t0, t2 - t1, t3 - t2, res.peak_retained, len(rest))


def _kmeans_seed(seed):
    return int(np.random.SeedSequence(seed).spawn(3)[2].generate_state(1)[0])


def run_cell(config, delta, seed):
    """One (minibatch, seed) run; ``delta`` may be ``KMEANS_ONLY``."""
    truth = config.true_params
    chain = simulate_chain(truth, config.chain_length, seed)
    if delta == KMEANS_ONLY:
        minibatch = prefix = config.chain_length
    else:
        minibatch = int(delta)
        prefix = config.kmeans_prefix if config.kmeans_prefix is not None else minibatch
        prefix = min(prefix, config.chain_length)
    res = fit(chain.observations, truth.n_states, minibatch, truth.manifold, prefix=prefix,
              rng_seed=_kmeans_seed(seed), n_init=config.kmeans_n_init,
              max_iter=config.kmeans_max_iter, tol=config.kmeans_tol,
              smoothing=config.smoothing, step_exponent=config.step_exponent)
    decoded = decode_states(res.gamma_filtered)
    perm, acc = best_permutation(decoded, chain.states, truth.n_states)
    A = align_transition(res.params.transition, perm)
    inv = np.argsort(perm)
    m = truth.manifold
    return {
        "delta": delta,
        "seed": seed,
        "accuracy": float(acc),
        "runtime_s": res.runtime_s,
        "kmeans_s": res.kmeans_s,
        "seed_s": res.seed_s,
        "online_s": res.online_s,
        "n_online": res.n_online,
        "peak_retained": res.peak_retained,
        "minibatch": minibatch,
        "transition": A.tolist(),
        "transition_rmse": transition_rmse(A, truth.transition),
        # component j of the true model <- estimated state inv[j]
        "centers": [m.to_json(res.params.centers[i]) for i in inv],
        "sigmas": [float(res.params.sigmas[i]) for i in inv],
    }


def _cell_job(args):
    config, delta, seed = args
    try:
        return run_cell(config, delta, seed)
    except Exception as exc:  # recorded, the other cells still run
        logger.warning("run delta=%s seed=%s failed: %s", delta, seed, exc)
        return {"delta": delta, "seed": seed, "error": f"{type(exc).__name__}: {exc}"}


def experiment_cells(config):
    cells = [(d, s) for d in config.minibatch_sizes for s in config.seeds]
    if config.kmeans_only:
        cells += [(KMEANS_ONLY, s) for s in config.seeds]
    return cells


@dataclass
class ExperimentResult:
    runs: list
    failures: list
    config: ExperimentConfig

    def rows(self, delta=None):
        return [r for r in self.runs if delta is None or r["delta"] == delta]

    def median(self, key, delta):
        vals = [r[key] for r in self.rows(delta)]
        return float(np.median(vals)) if vals else float("nan")


def run_experiment(config, write=True):
    """Run every (minibatch, seed) cell and optionally write the output files.

    Cells are independent; with ``config.workers > 1`` they run in a process
    pool. Results are ordered by (minibatch, seed) regardless of completion
    order.
    """
    jobs = [(config, d, s) for d, s in experiment_cells(config)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    runs = [r for r in results if "error" not in r]
    failures = [r for r in results if "error" in r]
    out = ExperimentResult(runs, failures, config)
    if write:
        os.makedirs(config.output_dir, exist_ok=True)
        write_metrics(out, config.path(config.metrics_file))
        write_summary(out, config.path(config.summary_file))
        write_estimates(out, config.path(config.estimates_file))
        write_reference(config.path(config.reference_file))
    return out


# ---------------------------------------------------------------------------
# output files


def _fmt(x):
    return "" if x is None else f"{x:.6f}"


def metrics_row(run):
    A = np.asarray(run["transition"])
    diag = [A[i, i] if i < len(A) else None for i in range(3)]
    return [str(run["delta"]), str(run["seed"]), _fmt(run["accuracy"]), _fmt(run["runtime_s"]),
            *(_fmt(v) for v in diag), _fmt(run["transition_rmse"])]


def write_metrics(result, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(METRICS_HEADER)
        for run in result.runs:
            w.writerow(metrics_row(run))


def write_summary(result, path):
    deltas = list(dict.fromkeys(r["delta"] for r in result.runs))
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["delta", "n_runs", "accuracy", "runtime_s", "a11", "a22", "a33", "transition_rmse"])
        for d in deltas:
            rows = result.rows(d)
            A = np.median([np.asarray(r["transition"]) for r in rows], axis=0)
            diag = [A[i, i] if i < len(A) else None for i in range(3)]
            w.writerow([d, len(rows), _fmt(result.median("accuracy", d)),
                        _fmt(result.median("runtime_s", d)), *(_fmt(v) for v in diag),
                        _fmt(result.median("transition_rmse", d))])


def write_reference(path):
    """Published table for comparison; never recomputed."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["source", "delta", "accuracy", "runtime_s", "a11", "a22", "a33", "transition_rmse"])
        for label, *vals in PUBLISHED_TABLE:
            w.writerow(["published", label, *("" if v is None else v for v in vals)])


def write_estimates(result, path):
    truth = result.config.true_params
    m = truth.manifold
    doc = {
        "manifold": truth.to_json()["manifold"],
        "true_centers": [m.to_json(c) for c in truth.centers],
        "true_transition": truth.transition.tolist(),
        "runs": [
            {k: r[k] for k in ("delta", "seed", "accuracy", "minibatch", "peak_retained",
                               "n_online", "kmeans_s", "seed_s", "online_s",
                               "centers", "sigmas", "transition")}
            for r in result.runs
        ],
        "failures": result.failures,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)


def emit_plot_data(estimates_path, out_path):
    """Flatten an estimates file into a scatter-ready CSV.

    One row per estimated centre (``kind=estimate``, grouped by minibatch and
    true component) plus one row per true centre (``kind=true``).
    """
    try:
        with open(estimates_path, encoding="utf-8") as f:
            doc = json.load(f)
        true_centers = doc["true_centers"]
        runs = doc["runs"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"{estimates_path}: corrupt estimates file ({exc})") from exc
    kind = doc.get("manifold", {"type": "poincare_disk"})
    if kind["type"] == "poincare_disk":
        names = ["re", "im"]
    else:
        d = int(kind["dim"])
        names = [f"x{i}{j}" for i in range(d) for j in range(d)]

    def flat(c):
        return list(np.ravel(c))

    with open(out_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["kind", "delta", "seed", "component", *names])
        for run in runs:
            for j, c in enumerate(run["centers"], start=1):
                w.writerow(["estimate", run["delta"], run["seed"], j, *flat(c)])
        for j, c in enumerate(true_centers, start=1):
            w.writerow(["true", "", "", j, *flat(c)])


def mean_center_error(estimates, delta):
    """Average distance from estimated to true centres over all runs at ``delta``."""
    m = PoincareDisk()
    truth = np.array([complex(*c) for c in estimates["true_centers"]])
    errs = [m.dist(complex(*c), truth[j])
            for r in estimates["runs"] if r["delta"] == delta
            for j, c in enumerate(r["centers"])]
    return float(np.mean(errs))


def with_overrides(config, **kw):
    return replace(config, **kw)
