import math

import numpy as np
import pytest

from src.turbine_twin.errors import DimensionError, TrainingError
from src.turbine_twin.nn_core import (
    IDENTITY,
    MAE,
    MSE,
    AdamState,
    DenseLayer,
    DenseNetwork,
    LstmLayer,
    LstmNetwork,
    adam_step,
    backward,
    dense_forward,
    forward,
    gradient_check,
    loss_gradient,
    lstm_step,
    relative_error,
    relu,
    sigmoid,
)


def _assert_gradients_match(checks):
    assert len(checks) >= 100
    for name, analytic, numeric in checks:
        close = relative_error(analytic, numeric) < 1e-4 or abs(analytic - numeric) < 1e-9
        assert close, f"{name}: analytic={analytic} numeric={numeric}"


def test_dense_gradients_match_finite_differences() -> None:
    rng = np.random.default_rng(3)
    network = DenseNetwork.initialize([8, 8, 5, 1], rng)
    inputs = rng.uniform(0.0, 1.0, size=(16, 8))
    target = rng.uniform(0.0, 1.0, size=16)

    checks = gradient_check(network, inputs, target, loss=MSE, coordinates=120, seed=1)

    _assert_gradients_match(checks)


def test_lstm_gradients_match_finite_differences() -> None:
    rng = np.random.default_rng(5)
    network = LstmNetwork.initialize(8, 8, (5, 1), rng)
    inputs = rng.uniform(0.0, 1.0, size=(4, 6, 8))
    target = rng.uniform(0.0, 1.0, size=(4, 6))

    checks = gradient_check(network, inputs, target, loss=MSE, coordinates=120, seed=2)

    _assert_gradients_match(checks)
    assert any(name.startswith("lstm.u_") for name, _, _ in checks)


def test_dense_forward_checks_input_width() -> None:
    layer = DenseLayer(np.ones((2, 3)), np.zeros(2), IDENTITY)

    assert dense_forward(layer, np.array([1.0, 2.0, 3.0])).tolist() == [6.0, 6.0]
    with pytest.raises(DimensionError):
        dense_forward(layer, np.ones(4))
    with pytest.raises(DimensionError):
        DenseLayer(np.ones((2, 3)), np.zeros(3))


def test_relu_and_sigmoid_edges() -> None:
    assert relu(-2.0) == 0.0
    assert relu(0.5) == 0.5
    values = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert values.tolist() == [0.0, 0.5, 1.0]


def test_lstm_step_from_zero_state() -> None:
    rng = np.random.default_rng(0)
    network = LstmNetwork.initialize(3, 4, (5, 1), rng)
    layer = network.lstm
    x = np.array([0.2, -0.1, 0.7])

    h, c = lstm_step(layer, x, np.zeros(4), np.zeros(4))

    i = sigmoid(layer.w_i @ x + layer.b_i)
    g = np.tanh(layer.w_c @ x + layer.b_c)
    o = sigmoid(layer.w_o @ x + layer.b_o)
    np.testing.assert_allclose(c, i * g)
    np.testing.assert_allclose(h, o * np.tanh(i * g))
    assert layer.b_f.tolist() == [1.0] * 4
    with pytest.raises(DimensionError):
        lstm_step(layer, x, np.zeros(3), np.zeros(4))


def test_forward_shapes() -> None:
    rng = np.random.default_rng(1)
    dense = DenseNetwork.initialize([8, 8, 5, 1], rng)
    lstm = LstmNetwork.initialize(8, 8, (5, 1), rng)

    assert forward(dense, np.zeros((7, 8))).shape == (7,)
    assert forward(lstm, np.zeros((2, 29, 8))).shape == (2, 29)
    with pytest.raises(DimensionError):
        forward(lstm, np.zeros((2, 8)))


def test_mae_gradient_is_zero_at_zero_residual() -> None:
    gradient = loss_gradient(np.array([1.0, 2.0, 3.0]), np.array([1.0, 1.0, 4.0]), MAE)

    assert gradient.tolist() == [0.0, 1.0 / 3.0, -1.0 / 3.0]


def test_adam_matches_reference_recurrence() -> None:
    param = np.array([0.5, -0.25])
    grads = [np.array([0.1, -0.2]), np.array([0.05, 0.3]), np.array([-0.4, 0.0])]
    state = AdamState(learning_rate=0.01)

    expected = param.copy()
    m = np.zeros(2)
    v = np.zeros(2)
    for step, grad in enumerate(grads, start=1):
        adam_step(state, [param], [grad])
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad**2
        m_hat = m / (1 - 0.9**step)
        v_hat = v / (1 - 0.999**step)
        expected = expected - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
        np.testing.assert_allclose(param, expected, rtol=1e-12, atol=1e-15)
    assert state.step == 3


def test_adam_first_step_moves_by_learning_rate() -> None:
    param = np.array([1.0])
    adam_step(AdamState(learning_rate=0.01), [param], [np.array([5.0])])

    assert param[0] == pytest.approx(0.99, abs=1e-9)


def test_adam_rejects_non_finite_gradient() -> None:
    param = np.zeros(2)

    with pytest.raises(TrainingError) as excinfo:
        adam_step(AdamState(), [param], [np.array([math.nan, 0.0])], names=["dense0.bias"])
    assert "dense0.bias" in str(excinfo.value)
    assert param.tolist() == [0.0, 0.0]


def test_training_step_reduces_mse() -> None:
    rng = np.random.default_rng(11)
    network = DenseNetwork.initialize([3, 8, 5, 1], rng)
    inputs = rng.uniform(size=(64, 3))
    target = inputs @ np.array([0.5, -0.3, 0.2])
    blocks = network.parameter_blocks()
    params = [array for _, array in blocks]
    state = AdamState(learning_rate=0.01)

    first, _ = backward(network, inputs, target, MSE)
    for _ in range(200):
        _, grads = backward(network, inputs, target, MSE)
        adam_step(state, params, grads)
    last, _ = backward(network, inputs, target, MSE)

    assert last < first


def test_adam_minimizes_a_quadratic() -> None:
    w = np.array([0.0])
    state = AdamState(learning_rate=0.1)
    reference, m, v = 0.0, 0.0, 0.0

    for step in range(1, 101):
        adam_step(state, [w], [2.0 * (w - 3.0)])
        grad = 2.0 * (reference - 3.0)
        m = 0.9 * m + (1 - 0.9) * grad
        v = 0.999 * v + (1 - 0.999) * grad**2
        reference -= 0.1 * (m / (1 - 0.9**step)) / (math.sqrt(v / (1 - 0.999**step)) + 1e-8)

    assert w[0] == pytest.approx(reference, abs=1e-12)
    assert abs(w[0] - 3.0) < 0.1


def test_adam_leaves_parameters_alone_without_gradient() -> None:
    param = np.array([0.3, -1.2])

    adam_step(AdamState(), [param], [np.zeros(2)])

    assert param.tolist() == [0.3, -1.2]


def _saturated_layer(b_f: float, b_i: float, b_o: float) -> LstmLayer:
    blocks = {}
    for gate, bias in zip(("f", "i", "o", "c"), (b_f, b_i, b_o, 0.0)):
        blocks[f"w_{gate}"] = np.full((2, 3), 0.1)
        blocks[f"u_{gate}"] = np.full((2, 2), 0.1)
        blocks[f"b_{gate}"] = np.full(2, bias)
    return LstmLayer(**blocks)


def test_lstm_gate_saturation() -> None:
    x = np.array([0.4, -0.2, 0.9])
    h_prev = np.array([0.3, -0.5])
    c_prev = np.array([1.5, -0.7])

    _, c = lstm_step(_saturated_layer(60.0, -60.0, 0.0), x, h_prev, c_prev)
    np.testing.assert_allclose(c, c_prev, atol=1e-15)

    h, _ = lstm_step(_saturated_layer(0.0, 0.0, -60.0), x, h_prev, c_prev)
    np.testing.assert_allclose(h, np.zeros(2), atol=1e-15)


def test_lstm_single_unit_by_hand() -> None:
    blocks = {}
    for gate in ("f", "i", "o", "c"):
        blocks[f"w_{gate}"] = np.array([[0.5]])
        blocks[f"u_{gate}"] = np.array([[0.5]])
        blocks[f"b_{gate}"] = np.array([0.5])

    h, c = lstm_step(LstmLayer(**blocks), np.array([1.0]), np.zeros(1), np.zeros(1))

    gate = 1.0 / (1.0 + math.exp(-1.0))
    assert c[0] == pytest.approx(gate * math.tanh(1.0), abs=1e-12)
    assert h[0] == pytest.approx(gate * math.tanh(gate * math.tanh(1.0)), abs=1e-12)


def test_relu_network_without_bias_is_positively_homogeneous() -> None:
    rng = np.random.default_rng(7)
    network = DenseNetwork.initialize([8, 8, 5, 1], rng)
    for layer in network.layers:
        layer.bias[:] = 0.0
    x = rng.normal(size=(20, 8))

    for alpha in (0.25, 1.0, 3.5):
        np.testing.assert_allclose(forward(network, alpha * x), alpha * forward(network, x))
