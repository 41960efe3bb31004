import hashlib
import json
import os

import numpy as np
import pytest

from duet import io
from duet.cli import main
from duet.model import apply_pseudocount, validate_inputs
from duet.poisson import spotwise_deconvolve

WEIGHTS = ["--k-star", "4", "--k-dstar", "3"]


def _digest(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            out[os.path.relpath(p, root)] = hashlib.sha256(open(p, "rb").read()).hexdigest()
    return out


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["simulate", "--seed", "5", "--grid-side", "6", "--out", str(d)]) == 0
    return d


def test_simulate_writes_dataset(dataset):
    names = set(os.listdir(dataset))
    assert {"counts.csv", "coords.csv", "reference.csv", "truth_theta.csv", "truth_labels.csv",
            "truth_s.csv", "truth_v.csv", "scenario.json"} <= names
    scen = json.loads((dataset / "scenario.json").read_text())
    assert scen["grid_side"] == 6 and scen["seed"] == 5


def test_simulate_from_config(tmp_path, dataset):
    cfg = tmp_path / "scenario.json"
    cfg.write_text(json.dumps({"grid_side": 6, "seed": 5}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    assert _digest(tmp_path / "d") == _digest(dataset)


def test_triplet_dataset_matches_dense(tmp_path, dataset):
    out = tmp_path / "t"
    assert main(["--seed", "5", "simulate", "--grid-side", "6", "--format", "triplet",
                 "--out", str(out)]) == 0
    a = io.read_expression(out / "counts.triplet", out / "coords.csv",
                           gene_ids=io.read_reference(out / "reference.csv").gene_ids)
    b = io.read_expression(dataset / "counts.csv", dataset / "coords.csv")
    np.testing.assert_array_equal(a.counts, b.counts)


def test_pipeline(tmp_path, dataset):
    before = _digest(dataset)
    edges = tmp_path / "edges.csv"
    assert main(["weights", "--data", str(dataset), *WEIGHTS, "--out", str(edges)]) == 0
    tune = tmp_path / "tune"
    assert main(["tune", "--data", str(dataset), "--edges", str(edges), "--method", "bic",
                 "--n-points", "4", "--render", "--out", str(tune)]) == 0
    assert {"selection.csv", "selection.svg", "map.svg", "fit"} <= set(os.listdir(tune))
    assert set(io.FIT_FILES) <= set(os.listdir(tune / "fit"))
    metrics = tmp_path / "m.csv"
    assert main(["metrics", "--fit", str(tune / "fit"), "--truth", str(dataset),
                 "--out", str(metrics)]) == 0
    header, row = metrics.read_text().splitlines()
    assert header == "method,scenario,seed,ari,frob_sq,max_row"
    assert row.startswith("DUET,C5_m1_g6,5,")
    assert main(["render", "--fit", str(tune / "fit"), "--out", str(tmp_path / "r.svg")]) == 0
    assert (tmp_path / "r.svg").read_bytes() == (tune / "map.svg").read_bytes()
    assert _digest(dataset) == before


def test_fit_lambda_zero_matches_spotwise(tmp_path, dataset):
    out = tmp_path / "f"
    assert main(["fit", "--data", str(dataset), *WEIGHTS, "--lambda", "0", "--out", str(out)]) == 0
    res = io.read_fit(out)
    expr = io.read_expression(dataset / "counts.csv", dataset / "coords.csv")
    expr, ref = validate_inputs(expr, io.read_reference(dataset / "reference.csv"), 100)
    theta, s = spotwise_deconvolve(expr, apply_pseudocount(ref))
    np.testing.assert_allclose(res.theta, theta, rtol=0, atol=1e-4)
    np.testing.assert_allclose(res.s, s, rtol=1e-4)


def test_threads_do_not_change_output(tmp_path, dataset, monkeypatch):
    runs = []
    for k, flag in enumerate([["--threads", "1"], ["--threads", "3"], []]):
        if not flag:
            monkeypatch.setenv("DUET_THREADS", "2")
        out = tmp_path / f"t{k}"
        assert main(["tune", "--data", str(dataset), *WEIGHTS, "--method", "thinning",
                     "--n-points", "3", "--seed", "9", *flag, "--out", str(out)]) == 0
        runs.append(_digest(out))
    assert runs[0] == runs[1] == runs[2]


def test_solver_settings_from_config(tmp_path, dataset):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"lambda": 0.5, "weights": {"k_star": 4, "k_dstar": 3},
                               "solver": {"outer_max_iters": 1, "admm": {"max_iters": 3}}}))
    assert main(["--config", str(cfg), "fit", "--data", str(dataset), "--out",
                 str(tmp_path / "f")]) == 0
    meta = json.loads((tmp_path / "f" / "meta.json").read_text())
    assert meta["lambda"] == 0.5 and meta["iterations"] == 1


def test_usage_errors(tmp_path, capsys):
    assert main(["bogus"]) == 2
    assert "usage:" in capsys.readouterr().err
    assert main(["fit", "--data", str(tmp_path / "nope"), "--lambda", "1",
                 "--out", str(tmp_path / "f")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("duet fit: error:") and err.count("\n") == 1


def test_fit_without_lambda(tmp_path, dataset, capsys):
    assert main(["fit", "--data", str(dataset), "--out", str(tmp_path / "f")]) == 1
    assert "lambda" in capsys.readouterr().err
