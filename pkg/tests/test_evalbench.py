import csv
import json
import math

import numpy as np
import pytest

from conceptsr.config import RunConfig
from conceptsr.data import Dataset
from conceptsr.errors import ConfigError
from conceptsr.evalbench import (
    SKELETONS,
    Problem,
    Report,
    ReportRow,
    SolveCategory,
    custom_skeleton,
    exact_match,
    fit_skeleton,
    format_fit_table,
    load_suite,
    r_squared,
    run_benchmark,
    save_suite,
)
from conceptsr.exprcore import OperatorSet, parse
from helpers import FULL_OPS, LAW_A, LAW_B, LAW_E, scaling_dataset

OPS = OperatorSet(variable_names=("x1", "x2", "x3"), **FULL_OPS)


@pytest.fixture
def box():
    rng = np.random.default_rng(0)
    X = rng.uniform(1, 5, size=(300, 3))
    return Dataset(("x1", "x2", "x3"), X, np.zeros(300))


def test_exact_match(box):
    truth = parse("x1 * x2 + x3", OPS)
    assert exact_match(parse("x3 + x2 * x1", OPS), truth, box)
    assert exact_match(parse("(x1 * x2 + x3) * 1.0000001", OPS), truth, box)
    assert not exact_match(parse("x1 * x2 + x3 * 1.01", OPS), truth, box)
    assert not exact_match(parse("x1 * x2", OPS), truth, box)
    # extraneous variables fail even when their contribution is tiny
    assert not exact_match(parse("x1 * x2 + 1e-12 * x3", OPS), parse("x1 * x2", OPS), box)


def test_r_squared(box):
    d = Dataset(box.variable_names, box.X, box.X[:, 0] * 2)
    assert r_squared(parse("2 * x1", OPS), d) == pytest.approx(1.0)
    assert r_squared(parse("0 * x1 + 1", OPS), d) < 0.0
    assert r_squared(parse("log(x1 - 3)", OPS), d) == -math.inf


def test_solve_category_labels():
    assert [c.value for c in SolveCategory] == ["Exact Solve", "Almost Solve", "Close", "Not Close"]


def test_suite_roundtrip_and_validation(tmp_path):
    probs = [Problem("a", "x1 * x2", variables=["x1", "x2"], n_samples=50, distractors=1)]
    save_suite(probs, tmp_path / "s.json")
    assert load_suite(tmp_path / "s.json") == probs
    (tmp_path / "bad.json").write_text(json.dumps([{"name": "b", "colour": "red"}]))
    with pytest.raises(ConfigError):
        load_suite(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        Problem("c").dataset()


def test_problem_dataset_from_formula():
    p = Problem("p", "x1 + x2", variables=["x1", "x2"], ranges={"x1": [2, 3]}, n_samples=100, distractors=2)
    d = p.dataset()
    assert d.n_rows == 100 and len(d.variable_names) == 4
    assert d.column("x1").min() >= 2 and d.column("x1").max() <= 3
    assert np.allclose(d.y, d.column("x1") + d.column("x2"))


def test_run_benchmark_isolates_failures(tmp_path):
    cfg = RunConfig(iterations=5, n_populations=2, population_size=20, cycles_per_iteration=30, seed=1)
    probs = [
        Problem("easy", "x1 * x2", variables=["x1", "x2"], n_samples=100),
        Problem("missing", csv="nope.csv"),
    ]
    report = run_benchmark(probs, cfg, base_dir=tmp_path)
    easy, missing = report.rows
    assert easy.mse_solved and easy.exact_solve and easy.category == "Exact Solve"
    assert missing.error and not missing.mse_solved
    assert report.summary() == {"problems": 2, "exact_solve": 1, "mse_solved": 1, "errors": 1}
    report.write_csv(tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["name"] == "easy" and rows[0]["exact_solve"] == "True"


def test_run_benchmark_threads(tmp_path):
    cfg = RunConfig(iterations=2, n_populations=1, population_size=10, cycles_per_iteration=10)
    probs = [Problem(f"p{i}", "x1 + x2", variables=["x1", "x2"], n_samples=50, seed=i) for i in range(3)]
    report = run_benchmark(probs, cfg, workers=3)
    assert [r.name for r in report.rows] == ["p0", "p1", "p2"]


def test_skeleton_parameter_counts():
    assert {k: s.n_params for k, s in SKELETONS.items()} == {
        "lasr_law": 3, "chinchilla": 5, "modified_chinchilla": 5, "residual_only": 1}


def test_fit_lasr_law_small():
    d = scaling_dataset(n=3000, seed=1, noise=0.002)
    train, val = d.take(np.arange(2400)), d.take(np.arange(2400, 3000))
    fit = fit_skeleton("lasr_law", train, val, restarts=4)
    assert fit.params["A"] == pytest.approx(LAW_A, rel=0.02)
    assert fit.params["B"] == pytest.approx(LAW_B, rel=0.05)
    assert fit.params["E"] == pytest.approx(LAW_E, rel=0.01)
    assert fit.val_mse < 1e-5
    base = fit_skeleton("residual_only", train, val)
    assert base.params["E"] == pytest.approx(float(train.y.mean()), rel=1e-4)
    assert fit.val_mse < base.val_mse


def test_fit_rejects_decreasing_in_steps():
    # data that falls with training steps: the monotone constraint forces a flat fit
    rng = np.random.default_rng(0)
    t = np.exp(rng.uniform(np.log(1e4), np.log(1e6), 800))
    shots = np.ones(800)
    d = Dataset(("train_steps", "number_of_shots"), np.column_stack([t, shots]), 0.5 + 5e3 / t)
    fit = fit_skeleton("lasr_law", d.take(np.arange(600)), d.take(np.arange(600, 800)), restarts=3)
    grid = np.geomspace(1e4, 1e6, 50)
    pred = fit.params["A"] / (grid / fit.params["B"]) + fit.params["E"]
    assert np.all(np.diff(pred) >= -1e-12)
    assert fit.val_mse > 0.01 * np.var(d.y)


def test_group_by_and_bootstrap():
    d = scaling_dataset(n=2000, seed=2, noise=0.005)
    train, val = d.take(np.arange(1600)), d.take(np.arange(1600, 2000))
    fit = fit_skeleton("residual_only", train, val, group_by="number_of_shots", bootstrap=50)
    assert set(fit.group_params) == {0.0, 1.0, 2.0, 3.0}
    lo, hi = fit.val_mse_ci
    assert lo <= fit.val_mse <= hi
    pooled = fit_skeleton("residual_only", train, val)
    assert fit.val_mse < pooled.val_mse


def test_custom_skeleton_and_errors():
    rng = np.random.default_rng(0)
    x = rng.uniform(1, 10, 500)
    d = Dataset(("train_steps",), x[:, None], 2.0 - 3.0 / x)
    s = custom_skeleton("E - A / train_steps", ["A", "E"], ["train_steps"])
    fit = fit_skeleton(s, d.take(np.arange(400)), d.take(np.arange(400, 500)))
    assert fit.params == pytest.approx({"A": 3.0, "E": 2.0}, rel=1e-4)
    with pytest.raises(ConfigError):
        fit_skeleton("lasr_law", d, d)
    with pytest.raises(ConfigError):
        fit_skeleton("nope", d, d)


def test_format_fit_table():
    d = scaling_dataset(n=500, seed=3)
    fits = [fit_skeleton("residual_only", d, d)]
    table = format_fit_table(fits)
    assert table.splitlines()[0].split() == ["Scaling", "Law", "Skeleton", "MSE", "Loss", "Free", "Parameters"]
    assert table.splitlines()[1].split()[0] == "residual_only" and table.splitlines()[1].split()[-1] == "1"
