import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamsel import model as M
from streamsel.importance import build_plan_uniform, draw_batch, WeightedBatch

from conftest import fd_gradient


def test_zero_linear_model_gives_zero_logits():
    p = M.ModelParams([np.zeros((3, 4))], [np.zeros(3)], 0)
    assert np.array_equal(M.forward(p, np.array([1.0, -2.0, 3.0, 0.5])), np.zeros(3))


def test_identity_linear_model():
    p = M.ModelParams([np.eye(2)], [np.zeros(2)], 0)
    assert np.array_equal(M.forward(p, np.array([1.0, 0.0])), np.array([1.0, 0.0]))


def test_mlp_forward_matches_hand_computation():
    W1 = np.array([[1.0, -1.0], [0.5, 2.0]])
    b1 = np.array([0.0, -1.0])
    W2 = np.array([[2.0, 0.0], [-1.0, 1.0]])
    b2 = np.array([0.1, 0.2])
    p = M.ModelParams([W1, W2], [b1, b2], 1)
    x = (0.3, 0.7)
    # hidden pre-activations: 0.3 - 0.7 = -0.4 -> 0; 0.15 + 1.4 - 1 = 0.55
    h = (max(1.0 * x[0] - 1.0 * x[1] + 0.0, 0.0), max(0.5 * x[0] + 2.0 * x[1] - 1.0, 0.0))
    expected = (2.0 * h[0] + 0.0 * h[1] + 0.1, -1.0 * h[0] + 1.0 * h[1] + 0.2)
    np.testing.assert_allclose(M.forward(p, np.array(x)), expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(expected, (0.1, 0.75), atol=1e-15)


def test_forward_rejects_wrong_dimension(mlp):
    with pytest.raises(M.ShapeError):
        M.forward(mlp, np.ones(7))


def test_layer_shapes_must_compose():
    with pytest.raises(M.ShapeError):
        M.ModelParams([np.zeros((3, 2)), np.zeros((2, 4))], [np.zeros(3), np.zeros(2)])


def test_confident_correct_prediction_has_zero_gradient():
    p = M.ModelParams([np.array([[1000.0, 0.0], [0.0, 0.0]])], [np.zeros(2)], 0)
    g = M.per_sample_gradient(p, [1.0, 0.0], 0)
    assert g.norm == 0.0
    assert M.loss(p, [[1.0, 0.0]], [0])[0] == 0.0


def test_symmetric_softmax_gradient():
    p = M.ModelParams([np.zeros((2, 3))], [np.zeros(2)], 0)
    x = np.array([1.0, 2.0, -2.0])
    g = M.per_sample_gradient(p, x, 0).grad
    W = g[:6].reshape(2, 3)
    np.testing.assert_allclose(W[0], -0.5 * x)
    np.testing.assert_allclose(W[1], 0.5 * x)
    np.testing.assert_allclose(g[6:], [-0.5, 0.5])
    # weight block alone has norm 0.5 * |x| * sqrt(2)
    assert math.isclose(np.linalg.norm(W), 0.5 * np.linalg.norm(x) * math.sqrt(2), rel_tol=1e-12)


def test_invalid_label_rejected(mlp):
    with pytest.raises(M.LabelError):
        M.per_sample_gradient(mlp, np.zeros(4), 3)


@pytest.mark.parametrize("kind", ["linear", "mlp"])
def test_full_gradient_matches_finite_differences(kind, rng):
    p = M.linear_model(4, 3, seed=1) if kind == "linear" else M.mlp_model(4, 6, 3, seed=1)
    X = rng.normal(size=(5, 4))
    y = rng.integers(0, 3, size=5)
    G = M.per_sample_gradients(p, X, y, M.FULL)
    for i in range(5):
        fd = fd_gradient(p, X[i], y[i])
        assert np.linalg.norm(G[i] - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)


def test_last_layer_block_is_tail_of_full_gradient(mlp, rng):
    X = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, size=6)
    full = M.per_sample_gradients(mlp, X, y, M.FULL)
    last = M.per_sample_gradients(mlp, X, y, M.LAST_LAYER)
    assert last.shape[1] == mlp.n_params(M.LAST_LAYER)
    np.testing.assert_array_equal(full[:, -last.shape[1]:], last)


def test_last_layer_closed_form(mlp, rng):
    x = rng.normal(size=4)
    y = 2
    h = np.maximum(mlp.weights[0] @ x + mlp.biases[0], 0)
    z = mlp.weights[1] @ h + mlp.biases[1]
    delta = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
    delta[y] -= 1
    expected = np.concatenate([np.outer(delta, h).ravel(), delta])
    np.testing.assert_allclose(M.per_sample_gradient(mlp, x, y).grad, expected, rtol=1e-12)


def test_gradients_are_deterministic(mlp, rng):
    X = rng.normal(size=(8, 4))
    y = rng.integers(0, 3, size=8)
    a = M.per_sample_gradients(mlp, X, y, M.FULL)
    b = M.per_sample_gradients(mlp, X, y, M.FULL)
    assert a.tobytes() == b.tobytes()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.integers(0, 2))
def test_stored_norm_consistent(x, y):
    p = M.mlp_model(4, 5, 3, seed=9)
    g = M.per_sample_gradient(p, np.array(x), y, M.FULL)
    assert math.isclose(g.norm, float(np.sqrt(np.sum(g.grad ** 2))), rel_tol=1e-9, abs_tol=0)


def _batch(X, y, weights=None, mode="flat"):
    n = len(y)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    totals = {int(c): int((y == c).sum()) for c in np.unique(y)}
    return WeightedBatch(mode, np.arange(n), y, w, dict(totals), totals, n, X)


def test_sgd_zero_gradient_leaves_params_unchanged():
    p = M.ModelParams([np.array([[1000.0, 0.0], [0.0, 0.0]])], [np.zeros(2)], 0)
    out = M.sgd_step(p, _batch(np.array([[1.0, 0.0]]), np.array([0])), 0.5)
    np.testing.assert_array_equal(out.flatten(), p.flatten())


def test_sgd_single_sample_unit_weight(mlp, rng):
    x = rng.normal(size=4)
    g = M.per_sample_gradient(mlp, x, 1, M.FULL).grad
    out = M.sgd_step(mlp, _batch(x[None, :], np.array([1])), 1.0)
    np.testing.assert_allclose(out.flatten(), mlp.flatten() - g, rtol=0, atol=1e-15)


def test_sgd_uniform_full_batch_equals_gradient_descent(mlp, rng):
    X = rng.normal(size=(12, 4))
    y = rng.integers(0, 3, size=12)
    plan = build_plan_uniform(y, 12, replace=False)
    batch = draw_batch(plan, 0, X)
    lr = 0.3
    # direct oracle: numerical gradient of the mean loss via central differences
    flat = mlp.flatten()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += 1e-6
        down[i] -= 1e-6
        grad[i] = (M.loss(mlp.unflatten(up), X, y).mean() - M.loss(mlp.unflatten(down), X, y).mean()) / 2e-6
    out = M.sgd_step(mlp, batch, lr)
    np.testing.assert_allclose(out.flatten(), flat - lr * grad, rtol=0, atol=1e-8)


def test_sgd_rejects_bad_inputs(mlp):
    b = _batch(np.zeros((1, 4)), np.array([0]))
    with pytest.raises(ValueError):
        M.sgd_step(mlp, b, 0.0)


def test_params_roundtrip_bytes(mlp):
    data = M.params_to_bytes(mlp)
    back = M.params_from_bytes(data)
    assert back.feature_block == mlp.feature_block
    for a, b in zip(back.weights + back.biases, mlp.weights + mlp.biases):
        assert a.tobytes() == b.tobytes()
    assert M.params_to_bytes(back) == data


def test_feature_extraction():
    lin = M.linear_model(3, 2)
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(M.extract_features(lin, x), x)
    zero = M.ModelParams([np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)], 1)
    np.testing.assert_array_equal(M.extract_features(zero, x), np.zeros(4))
    p = M.ModelParams([np.array([[1.0, -2.0], [0.5, 0.5]]), np.zeros((2, 2))],
                      [np.array([0.0, 0.25]), np.zeros(2)], 1)
    # x = (1, 1): (1 - 2 + 0, 0.5 + 0.5 + 0.25) -> relu -> (0, 1.25)
    np.testing.assert_array_equal(M.extract_features(p, np.array([1.0, 1.0])), [0.0, 1.25])
