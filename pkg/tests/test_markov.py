from types import SimpleNamespace

import numpy as np
import pytest

from hadamard_hmm.gaussian import RiemannianGaussian
from hadamard_hmm.manifold import PoincareDisk
from hadamard_hmm.markov import (
    ChainSample,
    HmmParams,
    InvalidParamsError,
    disk_example_params,
    rng_streams,
    simulate_chain,
    simulate_emissions,
    validate,
)

DISK = PoincareDisk()


def stationary_oracle(A):
    # solve pi (A - I) = 0 with sum(pi) = 1 as an overdetermined linear system
    n = len(A)
    M = np.vstack([(np.asarray(A) - np.eye(n)).T, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1
    return np.linalg.lstsq(M, b, rcond=None)[0]


def test_example_params_valid():
    p = disk_example_params()
    assert validate(p) == []
    np.testing.assert_array_equal(p.transition, [[.4, .3, .3], [.2, .6, .2], [.1, .1, .8]])
    assert p.centers == [0j, 0.29 + 0.82j, -0.29 + 0.82j]
    np.testing.assert_array_equal(p.sigmas, [0.2, 1.0, 1.0])


def test_validate_row_sum():
    p = disk_example_params()
    A = p.transition.copy()
    A[1] = [0.2, 0.5, 0.2]
    problems = validate(HmmParams(A, p.initial, p.components))
    assert len(problems) == 1 and "row 1" in problems[0]


def test_validate_negative_sigma():
    p = disk_example_params()
    bad = SimpleNamespace(center=0j, sigma=-1.0, manifold=DISK)
    problems = validate(HmmParams(p.transition, p.initial, [p.components[0], bad, p.components[2]]))
    assert any("component 1" in s for s in problems)


def test_validate_initial_and_shape():
    p = disk_example_params()
    assert any("initial" in s for s in validate(HmmParams(p.transition, [0.5, 0.6, 0.0], p.components)))
    assert any("shape" in s for s in validate(HmmParams(np.eye(2), p.initial, p.components)))


def test_initial_state_is_first():
    p = disk_example_params()
    for seed in range(20):
        assert simulate_chain(p, 5, seed).states[0] == 0


def test_identity_transition_is_absorbing():
    p = disk_example_params()
    q = HmmParams(np.eye(3), [0.2, 0.3, 0.5], p.components)
    for seed in range(10):
        s = simulate_chain(q, 200, seed).states
        assert np.all(s == s[0])


def test_state_frequencies_match_stationary():
    p = disk_example_params()
    s = simulate_chain(p, 100_000, 1).states
    freq = np.bincount(s, minlength=3) / len(s)
    np.testing.assert_allclose(freq, stationary_oracle(p.transition), atol=0.01)


def test_emissions_given_states_match_delta():
    p = disk_example_params()
    states = simulate_chain(p, 100_000, 2).states
    _, emit = rng_streams(99)
    y = simulate_emissions(p, states, emit)
    centers = np.array(p.centers)
    d2 = DISK.dist2(y, centers[states])
    for i, g in enumerate(p.components):
        assert np.mean(d2[states == i]) == pytest.approx(g.delta, rel=0.02)


def test_simulation_bit_identical():
    p = disk_example_params()
    a, b = simulate_chain(p, 500, 4), simulate_chain(p, 500, 4)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.observations, b.observations)


def test_prefix_stable_under_length():
    p = disk_example_params()
    short, long = simulate_chain(p, 300, 8), simulate_chain(p, 1000, 8)
    np.testing.assert_array_equal(short.states, long.states[:300])
    np.testing.assert_array_equal(short.observations, long.observations[:300])


def test_simulate_rejects_invalid_params():
    p = disk_example_params()
    with pytest.raises(InvalidParamsError):
        simulate_chain(HmmParams(p.transition * 0.9, p.initial, p.components), 10, 0)
    with pytest.raises(ValueError):
        simulate_chain(p, 0, 0)


def test_params_json_round_trip(tmp_path):
    p = disk_example_params()
    p.save(tmp_path / "p.json")
    q = HmmParams.load(tmp_path / "p.json")
    np.testing.assert_array_equal(q.transition, p.transition)
    assert q.centers == p.centers
    np.testing.assert_array_equal(q.sigmas, p.sigmas)


def test_params_json_accepts_delta():
    obj = disk_example_params().to_json()
    for c in obj["components"]:
        del c["sigma"]
    q = HmmParams.from_json(obj)
    np.testing.assert_allclose(q.sigmas, [0.2, 1.0, 1.0], rtol=1e-9)


def test_chain_csv_round_trip(tmp_path):
    ch = simulate_chain(disk_example_params(), 50, 0)
    ch.to_csv(tmp_path / "c.csv")
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header == "t,state,re,im"
    back = ChainSample.from_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.states, ch.states)
    np.testing.assert_array_equal(back.observations, ch.observations)
    # external labels are 1-indexed
    assert (tmp_path / "c.csv").read_text().splitlines()[1].split(",")[1] == "1"


def test_permuted_params():
    p = disk_example_params()
    q = p.permuted([2, 0, 1])
    assert q.transition[0, 0] == 0.8 and q.transition[0, 1] == 0.1
    assert q.centers[1] == 0j
