import csv
import json

import pytest

from contagion_lens.cli import EXIT_CONFIG, EXIT_IO, main
from contagion_lens.netgen import connected_components, load_edge_list

SMALL = """\
betas = 0.5
phis = 0.3
n_realisations = 1
train_per_class = 30
test_per_class = 10
n_trees = 5
criterion = gini
subset_sizes =
egos_per_cell = 300
source_network.kind = ba
source_network.n = 1500
source_network.m = 2
subsample_n = 400
n_cascades = 2
filter_sweep = 0.8
"""


@pytest.fixture()
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def test_gen_network_er(tmp_path):
    out = tmp_path / "g.edges"
    assert main(["gen-network", "--model", "er", "--n", "500", "--p", "0.008", "--seed", "1", "--out", str(out)]) == 0
    g = load_edge_list(out)
    assert 450 < g.n_nodes <= 500  # largest component of the draw
    assert g.meta["model"]["kind"] == "er"
    manifest = json.loads((tmp_path / "g.edges.manifest.json").read_text())
    assert manifest["seed"] == 1


def test_gen_network_star(tmp_path):
    out = tmp_path / "s.edges"
    code = main(["gen-network", "--model", "star", "--degree-binomial", "1000", "0.004", "--count", "50",
                 "--out", str(out)])
    assert code == 0
    g = load_edge_list(out)
    assert len(connected_components(g)) == 50
    assert g.meta["model"]["kind"] == "star"


def test_gen_network_missing_parameter(tmp_path, capsys):
    assert main(["gen-network", "--model", "er", "--n", "100", "--out", str(tmp_path / "g")]) == EXIT_CONFIG
    assert "--p" in capsys.readouterr().err


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CONTAGION_LENS_SEED", "7")
    a, b = tmp_path / "a.edges", tmp_path / "b.edges"
    main(["gen-network", "--model", "ba", "--n", "200", "--m", "2", "--out", str(a)])
    main(["gen-network", "--model", "ba", "--n", "200", "--m", "2", "--seed", "7", "--out", str(b)])
    assert a.read_text() == b.read_text()
    monkeypatch.setenv("CONTAGION_LENS_SEED", "x")
    assert main(["gen-network", "--model", "ba", "--n", "200", "--m", "2", "--out", str(a)]) == EXIT_CONFIG


def test_unwritable_output_is_io_error(tmp_path):
    out = tmp_path / "missing_dir" / "g.edges"
    assert main(["gen-network", "--model", "er", "--n", "50", "--p", "0.1", "--out", str(out)]) == EXIT_IO


def test_unknown_experiment_id():
    assert main(["experiment", "--id", "6"]) == EXIT_CONFIG


def test_bad_flag():
    assert main(["experiment", "--bogus"]) == EXIT_CONFIG


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["experiment", "--id", "1", "--config", str(tmp_path / "none.cfg")]) == EXIT_IO


def test_experiment_one(tmp_path, small_cfg):
    out = tmp_path / "run1"
    assert main(["experiment", "--id", "1", "--config", str(small_cfg), "--out", str(out), "--jobs", "1"]) == 0
    assert (out / "accuracy_grid.csv").exists() and (out / "theory_grid.csv").exists()
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert "experiment --id 1" in manifest["command"]


def test_experiment_five_without_model(tmp_path, small_cfg):
    code = main(["experiment", "--id", "5", "--config", str(small_cfg), "--out", str(tmp_path / "r5"),
                 "--model", str(tmp_path / "none.json")])
    assert code == EXIT_CONFIG


@pytest.fixture(scope="module")
def exp_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    cfg = root / "small.cfg"
    cfg.write_text(SMALL)
    assert main(["experiment", "--id", "2", "--config", str(cfg), "--out", str(root / "run2"), "--jobs", "1"]) == 0
    assert main(["experiment", "--id", "4", "--config", str(cfg), "--out", str(root / "run4"), "--jobs", "1"]) == 0
    return root


def test_experiment_five_with_model(exp_runs):
    out = exp_runs / "run5"
    code = main(["experiment", "--id", "5", "--config", str(exp_runs / "small.cfg"), "--out", str(out),
                 "--model", str(exp_runs / "run4" / "forest.json"), "--jobs", "1"])
    assert code == 0
    rows = list(csv.reader((out / "counts_table.csv").open()))
    assert [r[0] for r in rows] == ["mechanism", "Sm", "Cx", "St"]


def test_classify_forest(exp_runs):
    obs = exp_runs / "run2" / "exp2_test.csv"
    out = exp_runs / "pred_forest.csv"
    model = exp_runs / "run4" / "forest.json"
    assert main(["classify", "--method", "forest", "--obs", str(obs), "--model", str(model), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 30
    assert all(0 < float(r["certainty"]) <= 1 for r in rows)


def test_classify_likelihood_estimated(exp_runs):
    obs = exp_runs / "run2" / "exp2_test.csv"
    out = exp_runs / "pred_llh.csv"
    assert main(["classify", "--method", "llh-est", "--obs", str(obs), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert {"loglik_Sm", "loglik_Cx", "loglik_St"} <= set(rows[0])


def test_classify_likelihood_known(exp_runs):
    obs = exp_runs / "run2" / "exp2_test.csv"
    params = exp_runs / "p.json"
    params.write_text('{"beta": 0.5, "phi": 0.3, "r": 0.005}')
    out = exp_runs / "pred_known.csv"
    assert main(["classify", "--method", "llh-known", "--obs", str(obs), "--params", str(params),
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    right = sum(r["predicted"] == r["label"] for r in rows)
    assert right / len(rows) > 0.5


def test_classify_known_needs_params(exp_runs):
    obs = exp_runs / "run2" / "exp2_test.csv"
    assert main(["classify", "--method", "llh-known", "--obs", str(obs)]) == EXIT_CONFIG
    assert main(["classify", "--method", "forest", "--obs", str(obs)]) == EXIT_CONFIG


def test_classify_missing_obs_is_io_error(tmp_path):
    assert main(["classify", "--method", "llh-est", "--obs", str(tmp_path / "none.csv")]) == EXIT_IO
