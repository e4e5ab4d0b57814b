"""
Effect of the minibatch size
============================

A reduced version of the reference experiment: a few minibatch sizes and
seeds, with the median of each column printed next to the published values.
Output files land in ``sweep_output/``; pass them to ``hadamard-hmm
plot-data`` for a scatter of the estimated centres.
"""

from hadamard_hmm.experiment import PUBLISHED_TABLE, ExperimentConfig, run_experiment

config = ExperimentConfig(minibatch_sizes=[40, 100, 200], seeds=[0, 1, 2], output_dir="sweep_output")
result = run_experiment(config)

published = {row[0]: row for row in PUBLISHED_TABLE}
print(f"{'delta':>7} {'accuracy':>9} {'published':>9} {'rmse':>6} {'published':>9}")
for d in config.minibatch_sizes + ["kmeans"]:
    ref = published[str(d)]
    print(f"{d!s:>7} {result.median('accuracy', d):9.3f} {ref[1]:9.2f} "
          f"{result.median('transition_rmse', d):6.3f} {ref[6]:9.2f}")
