#!/usr/bin/env python3
"""
Tape and op tests
Finite-difference checks for every differentiable op plus tape and optimizer contracts
"""

import numpy as np
import numpy.testing as npt
import pytest
import scipy.sparse as sp

import nn
from conftest import assert_gradients
from errors import NonFiniteError, ShapeError, TapeError, TrainingError
from nn import Tensor


def _param(rng, rows, cols):
    return Tensor(rng.normal(size=(rows, cols)), requires_grad=True)


def _weights(rng, rows, cols):
    """Fixed random projection so every op is checked through a scalar loss"""
    return Tensor(rng.normal(size=(rows, cols)))


@pytest.mark.parametrize("seed", range(20))
def test_composite_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = _param(rng, 4, 3)
    b = _param(rng, 3, 5)
    c = _param(rng, 4, 5)
    adj = sp.random(4, 4, density=0.5, random_state=seed, format="csr") + sp.identity(4, format="csr")
    labels = rng.integers(0, 5, size=4)
    mask = np.array([True, False, True, True])

    def loss():
        h = nn.add(nn.matmul(a, b), nn.scale(c, 0.7))
        h = nn.spmm(adj, nn.tanh(h))
        mixed = nn.select_rows(mask, nn.relu(h), nn.mean([h, c]))
        weights = nn.softmax_rows(nn.slice_cols(mixed, 0, 2))
        scaled = nn.scale_rows(mixed, nn.slice_cols(weights, 1, 2))
        wide = nn.concat_cols([scaled, h])
        return nn.cross_entropy(nn.slice_cols(wide, 2, 7), labels, mask)

    assert_gradients(loss, [a, b, c])


@pytest.mark.parametrize(
    "op",
    [nn.relu, nn.tanh, nn.softmax_rows, lambda x: nn.scale(x, -2.5), lambda x: nn.slice_cols(x, 1, 3)],
)
def test_unary_op_gradients(op, rng):
    x = _param(rng, 5, 4)
    w = _weights(rng, op(Tensor(np.ones((5, 4)))).shape[1], 1)
    assert_gradients(lambda: nn.sum_all(nn.matmul(op(x), w)), [x])


def test_spmm_gradient_is_transpose_product(rng):
    adj = sp.csr_matrix(np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 3.0]]))
    x = _param(rng, 3, 2)
    with nn.Tape() as tape:
        loss = nn.sum_all(nn.spmm(adj, x))
    tape.backward(loss)
    npt.assert_allclose(x.grad, adj.T @ np.ones((2, 2)))


def test_sparse_dropout_leaves_input_untouched_in_eval():
    matrix = sp.identity(3, format="csr")
    assert nn.sparse_dropout(matrix, 0.5, None, training=False) is matrix


def test_dropout_scales_kept_units(rng):
    x = Tensor(np.ones((50, 4)))
    out = nn.dropout(x, 0.5, rng, training=True)
    assert set(np.unique(out.values)) <= {0.0, 2.0}
    assert nn.dropout(x, 0.5, rng, training=False) is x


def test_mean_of_one_tensor_is_itself(rng):
    x = _param(rng, 2, 2)
    assert nn.mean([x]) is x


def test_cross_entropy_of_uniform_logits_is_log_classes():
    z = Tensor(np.zeros((3, 4)), requires_grad=True)
    loss = nn.cross_entropy(z, [0, 1, 2], np.array([True, True, True]))
    assert loss.item() == pytest.approx(np.log(4))


def test_cross_entropy_of_confident_correct_logits_vanishes():
    z = Tensor(np.where(np.eye(3, dtype=bool), 30.0, -30.0))
    loss = nn.cross_entropy(z, [0, 1, 2], np.array([True, True, True]))
    assert loss.item() <= 1e-6


def test_cross_entropy_accepts_id_masks():
    z = Tensor(np.array([[2.0, 0.0], [0.0, 2.0], [5.0, -5.0]]))
    by_ids = nn.cross_entropy(z, [0, 1, 1], [0, 1]).item()
    by_mask = nn.cross_entropy(z, [0, 1, 1], np.array([True, True, False])).item()
    assert by_ids == pytest.approx(by_mask)


def test_cross_entropy_rejects_bad_input():
    z = Tensor(np.zeros((2, 3)))
    with pytest.raises(TrainingError):
        nn.cross_entropy(z, [0, 1], np.array([False, False]))
    with pytest.raises(TrainingError):
        nn.cross_entropy(z, [0, 3], np.array([True, True]))
    with pytest.raises(ShapeError):
        nn.cross_entropy(z, [0], np.array([True]))


def test_backward_twice_raises(rng):
    x = _param(rng, 2, 2)
    with nn.Tape() as tape:
        loss = nn.sum_all(nn.relu(x))
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)
    tape.reset()
    with tape:
        loss = nn.sum_all(nn.tanh(x))
    tape.backward(loss)
    assert x.grad is not None


def test_backward_needs_scalar_loss(rng):
    x = _param(rng, 2, 2)
    with nn.Tape() as tape:
        out = nn.relu(x)
    with pytest.raises(ShapeError):
        tape.backward(out)


def test_backward_without_tape_raises(rng):
    loss = nn.sum_all(_param(rng, 2, 2))
    with pytest.raises(TapeError):
        nn.backward(loss)


def test_shape_mismatch_raises(rng):
    with pytest.raises(ShapeError):
        nn.matmul(_param(rng, 2, 3), _param(rng, 2, 3))
    with pytest.raises(ShapeError):
        nn.add(_param(rng, 2, 3), _param(rng, 3, 2))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 2, 2)))


def test_non_finite_detection_follows_profile():
    x = Tensor(np.array([[np.inf, 1.0]]))
    with pytest.raises(NonFiniteError):
        nn.scale(x, 2.0)
    nn.set_check_finite(False)
    try:
        assert np.isinf(nn.scale(x, 2.0).values[0, 0])
    finally:
        nn.set_check_finite(True)


def test_first_adam_step_moves_by_learning_rate(rng):
    w = _param(rng, 3, 3)
    untouched = _param(rng, 2, 2)
    before, before_untouched = w.values.copy(), untouched.values.copy()
    with nn.Tape() as tape:
        loss = nn.sum_all(nn.matmul(w, Tensor(np.eye(3))))
    tape.backward(loss)
    nn.adam_step({"w": w, "u": untouched}, None, nn.AdamState(), lr=0.01)
    npt.assert_allclose(before - w.values, np.full((3, 3), 0.01), rtol=1e-6)
    npt.assert_array_equal(untouched.values, before_untouched)


def test_adam_minimizes_quadratic():
    w = Tensor(np.array([[3.0], [-2.0]]), requires_grad=True)
    state = nn.AdamState()
    for _ in range(500):
        nn.zero_grad({"w": w})
        with nn.Tape() as tape:
            loss = nn.sum_all(nn.scale_rows(w, w))
        tape.backward(loss)
        nn.adam_step({"w": w}, None, state, lr=0.1)
    assert np.linalg.norm(w.values) < 1e-3


def test_adam_step_with_zero_gradients_keeps_params(rng):
    w = _param(rng, 3, 2)
    before = w.values.copy()
    nn.adam_step({"w": w}, {"w": np.zeros((3, 2))}, nn.AdamState(), lr=0.1)
    npt.assert_array_equal(w.values, before)


def test_softmax_of_zero_row_is_uniform():
    probs = nn.softmax_rows(Tensor(np.zeros((1, 4)))).values
    npt.assert_allclose(probs, np.full((1, 4), 0.25))


def test_softmax_rows_are_distributions(rng):
    probs = nn.softmax_rows(Tensor(rng.uniform(-5.0, 5.0, size=(20, 6)))).values
    npt.assert_allclose(probs.sum(axis=1), np.ones(20), atol=1e-9)
    assert np.all(probs > 0.0) and np.all(probs < 1.0)
