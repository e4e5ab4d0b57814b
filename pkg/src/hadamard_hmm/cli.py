"""Command-line entry point.

Subcommands::

    simulate    parameter JSON -> chain CSV
    fit         chain CSV + config -> trace JSONL, metrics CSV, fitted parameters
    experiment  config -> metrics, summary, reference table and estimates JSON
    plot-data   estimates JSON -> scatter CSV

Exit status is 0 on success, 1 for configuration errors, 2 for numerical
failures and 3 for I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import experiment as ex
from .kmeans import KMeansError
from .manifold import ManifoldError
from .markov import ChainSample, HmmParams, InvalidParamsError, simulate_chain
from .online import NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

logger = logging.getLogger("hadamard_hmm")


def _cmd_simulate(args):
    params = HmmParams.load(args.params)
    chain = simulate_chain(params, args.length, args.seed)
    chain.to_csv(args.out)
    logger.info("wrote %d observations to %s", len(chain), args.out)


def _cmd_fit(args):
    config = ex.load_config(args.config) if args.config else ex.ExperimentConfig()
    chain = ChainSample.from_csv(args.chain)
    n_states = args.states or config.n_states
    minibatch = args.minibatch or config.minibatch_sizes[0]
    if not 2 <= minibatch <= len(chain):
        raise ex.ConfigError(f"minibatch {minibatch} outside [2, {len(chain)}]")
    os.makedirs(args.out_dir, exist_ok=True)
    trace_every = args.trace_every if args.trace_every is not None else config.trace_every
    res = ex.fit(chain.observations, n_states, minibatch, chain.manifold,
                 prefix=config.kmeans_prefix, rng_seed=args.seed, n_init=config.kmeans_n_init,
                 max_iter=config.kmeans_max_iter, tol=config.kmeans_tol,
                 smoothing=config.smoothing, step_exponent=config.step_exponent,
                 trace_every=trace_every, trace_path=os.path.join(args.out_dir, "trace.jsonl"))
    res.params.save(os.path.join(args.out_dir, "params.json"))

    decoded = ex.decode_states(res.gamma_filtered)
    np.savetxt(os.path.join(args.out_dir, "decoded.csv"), decoded + 1, fmt="%d",
               header="state", comments="")
    A = res.params.transition
    acc = rmse = None
    if np.all(chain.states >= 0):
        perm, acc = ex.best_permutation(decoded, chain.states, n_states)
        A = ex.align_transition(A, perm)
        if config.true_params.n_states == n_states:
            rmse = ex.transition_rmse(A, config.true_params.transition)
    run = {"delta": minibatch, "seed": args.seed, "accuracy": acc, "runtime_s": res.runtime_s,
           "transition": A.tolist(), "transition_rmse": rmse}
    with open(os.path.join(args.out_dir, "metrics.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(ex.METRICS_HEADER)
        w.writerow(ex.metrics_row(run))
    logger.info("fit finished in %.2f s; accuracy %s", res.runtime_s,
                "n/a" if acc is None else f"{acc:.3f}")


def _cmd_experiment(args):
    config = ex.load_config(args.config)
    if args.out_dir:
        config.output_dir = args.out_dir
    if args.workers:
        config.workers = args.workers
    result = ex.run_experiment(config)
    for d in dict.fromkeys(r["delta"] for r in result.runs):
        logger.info("delta=%s median accuracy %.3f, median rmse %.3f", d,
                    result.median("accuracy", d), result.median("transition_rmse", d))
    for f in result.failures:
        logger.warning("failed: delta=%s seed=%s: %s", f["delta"], f["seed"], f["error"])
    if result.failures and not result.runs:
        raise NumericalError("every run failed")


def _cmd_plot_data(args):
    if not os.path.exists(args.estimates):
        raise FileNotFoundError(args.estimates)
    try:
        ex.emit_plot_data(args.estimates, args.out)
    except ValueError as exc:
        raise OSError(str(exc)) from exc


def build_parser():
    p = argparse.ArgumentParser(prog="hadamard-hmm", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a chain from a parameter file")
    s.add_argument("--params", required=True, help="parameter JSON")
    s.add_argument("--length", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="chain CSV to write")
    s.set_defaults(func=_cmd_simulate)

    f = sub.add_parser("fit", help="fit a chain with K-means initialization and online updates")
    f.add_argument("--chain", required=True, help="chain CSV (t,state,coordinates...)")
    f.add_argument("--config", help="key=value config file")
    f.add_argument("--minibatch", type=int, help="window size (default: first configured)")
    f.add_argument("--states", type=int, help="number of hidden states (default: from config)")
    f.add_argument("--seed", type=int, default=0, help="K-means seed")
    f.add_argument("--trace-every", type=int)
    f.add_argument("--out-dir", default=".")
    f.set_defaults(func=_cmd_fit)

    e = sub.add_parser("experiment", help="run the minibatch-size sweep")
    e.add_argument("--config", required=True)
    e.add_argument("--out-dir")
    e.add_argument("--workers", type=int)
    e.set_defaults(func=_cmd_experiment)

    d = sub.add_parser("plot-data", help="scatter CSV of estimated and true centres")
    d.add_argument("--estimates", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=_cmd_plot_data)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ex.ConfigError, InvalidParamsError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (NumericalError, KMeansError, ManifoldError, FloatingPointError) as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError) as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        # malformed input files and arguments
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
