import json

import numpy as np
import pytest

from ketembed.shape import FactoredShape, solve_shape
from ketembed.training import (
    OptimizerState,
    chance_jaccard,
    fit_dense,
    grad_check,
    jaccard,
    retrieval_probe,
    step,
    top_k_cosine,
)
from ketembed.word2ket import new_ket_embedding
from ketembed.word2ketxs import full_dense, new_ketxs


# -- optimizer steps -----------------------------------------------------------

def test_sgd_step():
    params = {"w": np.zeros(1)}
    step(OptimizerState("sgd", 1.0), params, {"w": np.ones(1)})
    assert params["w"][0] == -1.0


@pytest.mark.parametrize("g", [0.5, -3.0, 1e-3])
def test_adam_first_step_moves_by_learning_rate(g):
    params = {"w": np.array([2.0])}
    step(OptimizerState("adam", 1e-2), params, {"w": np.array([g])})
    # bias-corrected first step is lr * g / (|g| + eps)
    assert abs(params["w"][0] - 2.0) == pytest.approx(1e-2 * abs(g) / (abs(g) + 1e-8), rel=1e-12)
    assert abs(params["w"][0] - 2.0) == pytest.approx(1e-2, rel=1e-5)


def test_zero_gradient():
    p_sgd = {"w": np.array([1.5, -2.0])}
    step(OptimizerState("sgd", 0.1), p_sgd, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p_sgd["w"], [1.5, -2.0])
    p_adam = {"w": np.array([1.5, -2.0])}
    step(OptimizerState("adam", 0.1), p_adam, {"w": np.zeros(2)})
    assert np.all(np.abs(p_adam["w"] - [1.5, -2.0]) <= 0.1 * 1e-8)


def test_step_counter_and_moment_congruence():
    opt = OptimizerState("adam", 1e-3)
    params = {"a": np.zeros((2, 3)), "b": np.zeros(4)}
    for _ in range(3):
        step(opt, params, {"a": np.ones((2, 3)), "b": np.ones(4)})
    assert opt.step_count == 3
    assert {k: v.shape for k, v in opt.m.items()} == {"a": (2, 3), "b": (4,)}


def test_step_shape_mismatch():
    with pytest.raises(ValueError):
        step(OptimizerState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})
    with pytest.raises(ValueError):
        step(OptimizerState(), {"w": np.zeros(2)}, {"v": np.zeros(2)})


def test_unknown_optimizer():
    with pytest.raises(ValueError):
        OptimizerState("rmsprop")


# -- gradient checking --------------------------------------------------------

def test_grad_check_linear_model():
    e = new_ket_embedding(FactoredShape(d=3, p=4, n=1, r=1, q=4), seed=0)
    assert grad_check(e, [0, 1, 1]) <= 1e-9


def test_grad_check_ket_with_layernorm():
    e = new_ket_embedding(FactoredShape(d=3, p=64, n=3, r=2, q=4), seed=0)
    assert e.layernorm
    assert grad_check(e, [0, 2], seed=5) <= 1e-6


def test_grad_check_xs():
    op = new_ketxs(FactoredShape(d=9, p=9, n=2, r=2, q=3, t=3), seed=0)
    assert grad_check(op, range(9), seed=5) <= 1e-6


def test_grad_check_detects_wrong_gradient():
    op = new_ketxs(FactoredShape(d=9, p=9, n=2, r=1, q=3, t=3), seed=0)
    real = op.backward
    op.backward = lambda w, u: {k: 1.01 * v for k, v in real(w, u).items()}
    assert grad_check(op, range(9)) > 1e-3


# -- fitting ---------------------------------------------------------------------

SMALL = solve_shape(81, 16, 4, 5)


def test_realizable_target_is_recovered_quickly():
    target = full_dense(new_ketxs(SMALL, seed=0))
    model = new_ketxs(SMALL, seed=1)
    report = fit_dense(target, model, OptimizerState("adam", 1e-2), epochs=2000)
    assert report.iterations == 2000
    assert report.final_mse <= 1e-6
    assert report.final_mse == report.mse_history[-1]
    assert len(report.mse_history) == 2000


def test_sgd_loss_non_increasing_after_transient():
    target = full_dense(new_ketxs(SMALL, seed=0))
    model = new_ketxs(SMALL, seed=1)
    report = fit_dense(target, model, OptimizerState("sgd", 1e-2), epochs=300)
    hist = np.array(report.mse_history)
    assert np.all(np.diff(hist[50:]) <= 0)


def test_zero_target_shrinks_to_zero():
    model = new_ketxs(SMALL, seed=1)
    before = np.linalg.norm(full_dense(model))
    report = fit_dense(np.zeros((81, 16)), model, OptimizerState("adam", 1e-2), epochs=500)
    hist = report.mse_history
    assert hist[-1] < hist[99] < hist[0]
    assert report.final_mse < 1e-4 * hist[0]
    assert np.linalg.norm(full_dense(model)) < 1e-2 * before


def test_random_target_is_compressed_nontrivially():
    target = np.random.default_rng(0).standard_normal((81, 16))
    report = fit_dense(target, new_ketxs(SMALL, seed=1), OptimizerState("adam", 1e-2), epochs=1000)
    assert report.final_mse < target.var()
    assert report.param_count == 120
    assert report.space_saving_rate == pytest.approx(81 * 16 / 120)


def test_minibatch_fit_is_deterministic():
    target = np.random.default_rng(0).standard_normal((50, 9))
    s = solve_shape(50, 9, 2, 2)
    a = fit_dense(target, new_ketxs(s, 3), epochs=20, batch_rows=8, seed=11)
    b = fit_dense(target, new_ketxs(s, 3), epochs=20, batch_rows=8, seed=11)
    assert a.mse_history == b.mse_history
    assert a.iterations == 20 * 7


def test_masked_rows_never_enter_the_loss():
    s = FactoredShape.for_ket(10, 16, 2, 2)
    target = np.random.default_rng(0).standard_normal((10, 16))
    other = target.copy()
    other[6:] = 1e6
    m1, m2 = new_ket_embedding(s, seed=0), new_ket_embedding(s, seed=0)
    frozen = m1.factors[6:].copy()
    r1 = fit_dense(target, m1, epochs=30, batch_rows=4, mask_rows_at=6, seed=2)
    r2 = fit_dense(other, m2, epochs=30, batch_rows=4, mask_rows_at=6, seed=2)
    assert r1.mse_history == r2.mse_history
    assert m1.factors[6:].tobytes() == frozen.tobytes()


def test_xs_phantom_rows_in_target_are_ignored():
    s = solve_shape(20, 9, 2, 2)
    target = np.random.default_rng(0).standard_normal((25, 9))
    other = target.copy()
    other[20:] = -7.0
    r1 = fit_dense(target, new_ketxs(s, 0), epochs=10)
    r2 = fit_dense(other, new_ketxs(s, 0), epochs=10)
    assert r1.mse_history == r2.mse_history


@pytest.mark.parametrize("rows", [5, 40])
def test_fit_rejects_bad_target(rows):
    with pytest.raises(ValueError):
        fit_dense(np.zeros((rows, 9)), new_ketxs(solve_shape(20, 9, 2, 2), 0), epochs=1)


def test_fit_report_jsonl():
    report = fit_dense(np.zeros((9, 4)), new_ketxs(solve_shape(9, 4, 2, 1), 0), epochs=3)
    records = [json.loads(line) for line in report.to_jsonl().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3]
    assert [r["mse"] for r in records] == report.mse_history
    assert all(r["wall_time"] >= 0 for r in records)


# -- retrieval ---------------------------------------------------------------------

def test_top_k_ties_broken_by_index():
    m = np.array([[1.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    assert top_k_cosine(m, [0], 2)[0].tolist() == [1, 2]
    assert top_k_cosine(m, [0], 2, exclude_self=False)[0].tolist() == [0, 1]


def test_jaccard():
    assert jaccard([1, 2, 3], [2, 3, 4]) == 0.5
    assert jaccard([], []) == 1.0


def test_exact_copy_overlap_is_one():
    op = new_ketxs(solve_shape(300, 20, 2, 3), seed=0)
    assert retrieval_probe(full_dense(op), op, k=10) == 1.0


def test_chance_jaccard_matches_simulation():
    rng = np.random.default_rng(0)
    d, k = 200, 10
    sims = [jaccard(rng.choice(d - 1, k, replace=False), rng.choice(d - 1, k, replace=False)) for _ in range(20000)]
    mean, std = chance_jaccard(d, k)
    assert mean == pytest.approx(np.mean(sims), abs=4 * std / np.sqrt(20000))
    assert std == pytest.approx(np.std(sims), rel=0.05)


def test_unfit_model_is_at_chance():
    d, k = 1000, 10
    original = np.random.default_rng(1).standard_normal((d, 50))
    model = new_ketxs(solve_shape(d, 50, 2, 4), seed=2)
    overlap = retrieval_probe(original, model, k=k, n_queries=100)
    mean, std = chance_jaccard(d, k)
    assert abs(overlap - mean) <= 3 * std / np.sqrt(100)
