"""
Fitting a hidden Markov model online
====================================

Simulate the three-state chain, initialize on the first 200 observations
with Riemannian K-means and let the constant-memory filter refine the
estimates over the rest of the stream.
"""

import numpy as np

from hadamard_hmm import accuracy, decode_states, disk_example_params, fit, simulate_chain
from hadamard_hmm.experiment import best_permutation, align_transition

truth = disk_example_params()
chain = simulate_chain(truth, length=10_000, rng_seed=0)

res = fit(chain.observations, n_states=3, minibatch=200)
decoded = decode_states(res.gamma_filtered)
perm, acc = best_permutation(decoded, chain.states)
print(f"accuracy {acc:.3f}; K-means {res.kmeans_s:.2f}s, fine-tuning {res.online_s:.2f}s")
print(f"observations held in memory: {res.peak_retained}")

np.set_printoptions(precision=3, suppress=True)
print("estimated A (true labelling)\n", align_transition(res.params.transition, perm))
print("true A\n", truth.transition)
inv = np.argsort(perm)
for j in range(3):
    i = inv[j]
    print(f"state {j + 1}: centre {res.params.centers[i]:.3f} (true {truth.centers[j]}), "
          f"sigma {res.params.sigmas[i]:.3f} (true {truth.sigmas[j]})")
