import csv
import json

import numpy as np
import pytest

from hadamard_hmm import cli
from hadamard_hmm.experiment import (
    KMEANS_ONLY,
    METRICS_HEADER,
    PUBLISHED_TABLE,
    ConfigError,
    ExperimentConfig,
    accuracy,
    align_transition,
    best_permutation,
    decode_states,
    emit_plot_data,
    load_config,
    parse_config,
    run_cell,
    run_experiment,
    transition_rmse,
)
from hadamard_hmm.markov import ChainSample, HmmParams, disk_example_params

TRUE_A = np.array([[0.4, 0.3, 0.3], [0.2, 0.6, 0.2], [0.1, 0.1, 0.8]])


# ---------------------------------------------------------------------------
# scoring


def test_decode_one_hot():
    labels = np.array([2, 0, 1, 1])
    np.testing.assert_array_equal(decode_states(np.eye(3)[labels]), labels)


def test_decode_ties_go_to_lowest():
    assert decode_states([[1 / 3, 1 / 3, 1 / 3]])[0] == 0
    assert decode_states([[0.3, 0.7]])[0] == 1


def test_accuracy_examples():
    truth = np.array([0, 0, 1, 1, 2, 2, 1])
    assert accuracy(truth, truth) == 1.0
    assert accuracy((truth + 1) % 3, truth) == 1.0
    assert accuracy([0, 1, 1, 1], [0, 0, 1, 1]) == 0.75


def test_accuracy_length_mismatch():
    with pytest.raises(ValueError):
        accuracy([0, 1], [0, 1, 1])


def test_best_permutation_maps_estimate_to_truth():
    perm, acc = best_permutation([2, 2, 0, 1], [0, 0, 1, 2], 3)
    np.testing.assert_array_equal(perm, [1, 2, 0])
    assert acc == 1.0


def test_rmse_examples():
    assert transition_rmse(TRUE_A, TRUE_A) == 0.0
    # squared deviations from 1/3, summed entry by entry
    sq = (0.4 - 1 / 3) ** 2 * 1 + (0.3 - 1 / 3) ** 2 * 2 + (0.2 - 1 / 3) ** 2 * 2 \
        + (0.6 - 1 / 3) ** 2 + (0.1 - 1 / 3) ** 2 * 2 + (0.8 - 1 / 3) ** 2
    assert transition_rmse(np.full((3, 3), 1 / 3), TRUE_A) == pytest.approx(np.sqrt(sq), rel=1e-14)
    assert sq == pytest.approx(0.44, rel=1e-12)


def test_rmse_after_alignment():
    perm = np.array([2, 0, 1])  # estimated state i is true state perm[i]
    relabeled = TRUE_A[np.ix_(perm, perm)]
    assert transition_rmse(relabeled, TRUE_A, perm) == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_array_equal(align_transition(relabeled, perm), TRUE_A)


def test_rmse_shape_mismatch():
    with pytest.raises(ValueError):
        transition_rmse(np.eye(2), TRUE_A)


# ---------------------------------------------------------------------------
# configuration


def test_parse_config(tmp_path):
    disk_example_params().save(tmp_path / "truth.json")
    text = """
    # sweep
    params = truth.json
    chain.length=5000
    minibatch=40,60 , 80
    seeds=3,4
    kmeans.only=false
    output.dir=out
    """
    (tmp_path / "exp.cfg").write_text(text, encoding="utf-8")
    cfg = load_config(tmp_path / "exp.cfg")
    assert cfg.chain_length == 5000
    assert cfg.minibatch_sizes == [40, 60, 80]
    assert cfg.seeds == [3, 4]
    assert cfg.kmeans_only is False
    assert cfg.output_dir == str(tmp_path / "out")
    np.testing.assert_array_equal(cfg.true_params.transition, TRUE_A)


@pytest.mark.parametrize("text", ["bogus=1", "chain.length=abc", "minibatch=1", "minibatch=50000",
                                  "seeds=", "no equals sign", "kmeans.only=maybe"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_invariants():
    with pytest.raises(ConfigError):
        ExperimentConfig(chain_length=100, minibatch_sizes=[200])
    with pytest.raises(ConfigError):
        ExperimentConfig(seeds=[])


# ---------------------------------------------------------------------------
# experiment runs


def small_config(tmp_path, **kw):
    base = dict(chain_length=1200, minibatch_sizes=[100, 300], seeds=[0, 1], output_dir=str(tmp_path),
                kmeans_n_init=3)
    base.update(kw)
    return ExperimentConfig(**base)


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_run_experiment_outputs(tmp_path):
    cfg = small_config(tmp_path)
    res = run_experiment(cfg)
    rows = read_rows(tmp_path / "metrics.csv")
    assert rows[0] == METRICS_HEADER
    assert [(r[0], r[1]) for r in rows[1:]] == [("100", "0"), ("100", "1"), ("300", "0"), ("300", "1"),
                                               ("kmeans", "0"), ("kmeans", "1")]
    for r in res.runs:
        assert 0 <= r["accuracy"] <= 1 and r["runtime_s"] >= 0 and r["transition_rmse"] >= 0
        if r["delta"] != KMEANS_ONLY:
            assert r["peak_retained"] == r["delta"]
    est = json.loads((tmp_path / "estimates.json").read_text())
    assert len(est["runs"]) == 6 and est["failures"] == []
    ref = read_rows(tmp_path / "reference.csv")
    assert ["published", "em", "0.9", "2623.69", "0.31", "0.88", "0.96", "1.29"] in ref
    assert len(ref) == len(PUBLISHED_TABLE) + 1
    summary = read_rows(tmp_path / "summary.csv")
    assert [r[0] for r in summary[1:]] == ["100", "300", "kmeans"]


def test_metrics_deterministic_except_runtime(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment(small_config(a, minibatch_sizes=[150], seeds=[2]))
    run_experiment(small_config(b, minibatch_sizes=[150], seeds=[2]))
    ra, rb = read_rows(a / "metrics.csv"), read_rows(b / "metrics.csv")
    strip = lambda rows: [r[:3] + r[4:] for r in rows]
    assert strip(ra) == strip(rb)


def test_full_prefix_equals_kmeans_only(tmp_path):
    cfg = small_config(tmp_path, minibatch_sizes=[1200], seeds=[0])
    full, km = run_cell(cfg, 1200, 0), run_cell(cfg, KMEANS_ONLY, 0)
    assert full["n_online"] == 0
    assert full["accuracy"] == km["accuracy"]
    assert full["transition"] == km["transition"]
    assert full["centers"] == km["centers"]


def test_failed_cell_is_recorded(tmp_path):
    # a two-point prefix cannot be split into three clusters
    cfg = small_config(tmp_path, minibatch_sizes=[2, 100], seeds=[0], kmeans_only=False)
    res = run_experiment(cfg)
    assert [r["delta"] for r in res.runs] == [100]
    assert len(res.failures) == 1 and res.failures[0]["delta"] == 2
    assert "KMeansError" in res.failures[0]["error"]


def test_worker_pool_merges_in_order(tmp_path):
    serial = run_experiment(small_config(tmp_path / "s", minibatch_sizes=[100, 200], seeds=[0, 1],
                                         kmeans_only=False))
    pooled = run_experiment(small_config(tmp_path / "p", minibatch_sizes=[100, 200], seeds=[0, 1],
                                         kmeans_only=False, workers=2))
    assert [(r["delta"], r["seed"], r["accuracy"]) for r in serial.runs] == \
        [(r["delta"], r["seed"], r["accuracy"]) for r in pooled.runs]


# ---------------------------------------------------------------------------
# plot data


def one_run_dump(tmp_path):
    cfg = small_config(tmp_path, minibatch_sizes=[200], seeds=[0], kmeans_only=False)
    run_experiment(cfg)
    return tmp_path / "estimates.json"


def test_plot_data_cardinality(tmp_path):
    out = tmp_path / "scatter.csv"
    emit_plot_data(one_run_dump(tmp_path), out)
    rows = read_rows(out)
    assert rows[0] == ["kind", "delta", "seed", "component", "re", "im"]
    kinds = [r[0] for r in rows[1:]]
    assert kinds.count("estimate") == 3 and kinds.count("true") == 3
    z = np.array([complex(float(r[4]), float(r[5])) for r in rows[1:]])
    assert np.all(np.abs(z) < 1)


def test_plot_data_missing_or_corrupt(tmp_path):
    with pytest.raises(OSError):
        emit_plot_data(tmp_path / "missing.json", tmp_path / "x.csv")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValueError):
        emit_plot_data(bad, tmp_path / "x.csv")
    bad.write_text('{"runs": []}')
    with pytest.raises(ValueError):
        emit_plot_data(bad, tmp_path / "x.csv")


# ---------------------------------------------------------------------------
# command line


def test_cli_round_trip(tmp_path):
    disk_example_params().save(tmp_path / "p.json")
    assert cli.main(["simulate", "--params", str(tmp_path / "p.json"), "--length", "800",
                     "--seed", "1", "--out", str(tmp_path / "chain.csv")]) == 0
    chain = ChainSample.from_csv(tmp_path / "chain.csv")
    assert len(chain) == 800
    assert cli.main(["fit", "--chain", str(tmp_path / "chain.csv"), "--minibatch", "150",
                     "--trace-every", "100", "--out-dir", str(tmp_path / "fit")]) == 0
    rows = read_rows(tmp_path / "fit" / "metrics.csv")
    assert rows[0] == METRICS_HEADER and rows[1][0] == "150"
    assert float(rows[1][2]) > 0.5
    trace = (tmp_path / "fit" / "trace.jsonl").read_text().splitlines()
    assert len(trace) == 6 and "gamma_filtered" in json.loads(trace[0])
    HmmParams.load(tmp_path / "fit" / "params.json")

    (tmp_path / "exp.cfg").write_text("params=p.json\nchain.length=600\nminibatch=150\nseeds=0\n"
                                      "kmeans.n_init=2\noutput.dir=out\n")
    assert cli.main(["experiment", "--config", str(tmp_path / "exp.cfg")]) == 0
    assert cli.main(["plot-data", "--estimates", str(tmp_path / "out" / "estimates.json"),
                     "--out", str(tmp_path / "scatter.csv")]) == 0
    assert len(read_rows(tmp_path / "scatter.csv")) == 1 + 2 * 3 + 3


def test_cli_exit_codes(tmp_path):
    (tmp_path / "bad.cfg").write_text("nonsense=1\n")
    assert cli.main(["experiment", "--config", str(tmp_path / "bad.cfg")]) == cli.EXIT_CONFIG
    assert cli.main(["plot-data", "--estimates", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "o.csv")]) == cli.EXIT_IO
    assert cli.main(["simulate", "--params", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "c.csv")]) == cli.EXIT_IO
    p = disk_example_params().to_json()
    p["transition"][0] = [0.5, 0.5, 0.5]
    (tmp_path / "invalid.json").write_text(json.dumps(p))
    assert cli.main(["simulate", "--params", str(tmp_path / "invalid.json"),
                     "--out", str(tmp_path / "c.csv")]) == cli.EXIT_CONFIG
    # a constant chain cannot be split into three clusters
    rows = ["t,state,re,im"] + [f"{t},,0.1,0.2" for t in range(1, 41)]
    (tmp_path / "flat.csv").write_text("\n".join(rows) + "\n")
    assert cli.main(["fit", "--chain", str(tmp_path / "flat.csv"), "--minibatch", "10",
                     "--out-dir", str(tmp_path / "flat")]) == cli.EXIT_NUMERICAL
