import math

import numpy as np
import pytest

from nalustock.benchmarks import (
    ArithTask, BenchConfig, gen_arith_task, mae, make_model, run_extrapolation_bench,
    saturated_nac, ArithSplit,
)
from nalustock.autodiff import constant
from nalustock.errors import BenchError


@pytest.fixture(scope="module")
def add_bench():
    return run_extrapolation_bench(ArithTask("add")).by_model()


def test_targets():
    assert ArithTask("add").target(np.array([[0.3, 0.4]]))[0, 0] == pytest.approx(0.7)
    assert ArithTask("subtract").target(np.array([[0.5, 0.2]]))[0, 0] == pytest.approx(0.3)
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    assert ArithTask("subtract", input_dim=4).target(x)[0, 0] == -4.0
    assert ArithTask("scale_sum").target(np.array([[1.0, 2.5]]))[0, 0] == 7.0


def test_generator_contract():
    task = ArithTask("add", input_dim=3, n_train=100, n_test=300)
    train, interp, extrap = gen_arith_task(task, seed=4)
    assert train.inputs.shape == (100, 3) and extrap.inputs.shape == (300, 3)
    assert train.inputs.min() >= 0 and train.inputs.max() <= 0.5
    assert interp.inputs.min() >= 0 and interp.inputs.max() <= 0.5
    assert np.all(((extrap.inputs < 0) | (extrap.inputs > 0.5)).any(axis=1))
    assert extrap.inputs.max() <= 2.0
    np.testing.assert_array_equal(extrap.targets, task.target(extrap.inputs))
    again = gen_arith_task(task, seed=4)
    assert all(np.array_equal(a.inputs, b.inputs) for a, b in zip((train, interp, extrap), again))


@pytest.mark.parametrize("kwargs", [
    dict(train_range=(0.0, 0.5), test_range=(0.0, 0.5)),
    dict(train_range=(0.0, 0.5), test_range=(0.1, 2.0)),
    dict(train_range=(0.5, 0.0)),
    dict(test_range=(0.0, math.inf)),
    dict(operation="multiply"),
    dict(operation="subtract", input_dim=3),
])
def test_task_validation(kwargs):
    with pytest.raises(BenchError):
        ArithTask(**kwargs)


@pytest.mark.parametrize("signs,op", [([1, 1], "add"), ([1, -1], "subtract")])
def test_saturated_nac_is_exact(signs, op):
    model = saturated_nac(2, signs)
    w = model.layers[0].effective_weight().value
    np.testing.assert_allclose(w, [signs], atol=1e-7)
    # 4x the training range and far beyond it
    for hi in (2.0, 1e3):
        x = np.random.default_rng(0).uniform(0, hi, (512, 2))
        split = ArithSplit(x, ArithTask(op).target(x))
        assert mae(model, split) <= 1e-3


def test_models_are_linear_output():
    for kind in ("dense", "nac", "nalu", "nalu_exp"):
        model = make_model(kind, 2, seed=0)
        assert model(constant([[0.0, 0.0]])).shape == (1, 1)
    with pytest.raises(BenchError):
        make_model("lstm", 2, seed=0)


def test_nac_beats_dense_on_add(add_bench):
    assert add_bench["nac"].extrap_mae < add_bench["dense"].extrap_mae


def test_dense_interpolates_but_degrades(add_bench):
    dense = add_bench["dense"]
    assert dense.interp_mae < 0.05
    assert dense.extrap_mae >= 2 * dense.interp_mae


def test_bench_rows(add_bench, tmp_path):
    assert sorted(add_bench) == ["dense", "nac", "nalu"]
    assert all(r.interp_mae >= 0 and r.extrap_mae >= 0 and not r.diverged for r in add_bench.values())


def test_bench_deterministic_and_csv(tmp_path):
    cfg = BenchConfig(epochs=50, seed=3)
    paths = []
    for i in range(2):
        paths.append(tmp_path / f"b{i}.csv")
        run_extrapolation_bench(ArithTask("subtract"), cfg).write_csv(paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    lines = paths[0].read_text().splitlines()
    assert lines[0] == "model,task,interp_mae,extrap_mae,epochs"
    assert [l.split(",")[0] for l in lines[1:]] == ["dense", "nac", "nalu"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_recorded_per_model():
    # a huge learning rate blows up the dense net but the bench still completes
    res = run_extrapolation_bench(ArithTask("add"), BenchConfig(epochs=30, lr=1e200), models=("dense", "nac"))
    rows = res.by_model()
    assert set(rows) == {"dense", "nac"}
    assert rows["dense"].diverged and rows["dense"].extrap_mae == math.inf
