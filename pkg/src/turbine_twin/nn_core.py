"""Dense and LSTM layers with analytical gradients, Adam and the two training losses.

All arithmetic is float64. Batched inputs are row-major: a dense batch is
``(batch, features)`` and an LSTM batch is ``(batch, steps, features)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, TrainingError

RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)

MAE = "mae"
MSE = "mse"
LOSSES = (MAE, MSE)


def relu(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    if np.ndim(x) == 0:
        return max(0.0, float(x))
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


def glorot_uniform(fan_out: int, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == RELU else z


@dataclass(slots=True, eq=False)
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = RELU

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise DimensionError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise DimensionError("dense layer parameters must be finite")

    @classmethod
    def initialize(
        cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator
    ) -> "DenseLayer":
        return cls(glorot_uniform(out_dim, in_dim, rng), np.zeros(out_dim), activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise DimensionError(f"dense layer expects {layer.in_dim} inputs, got {x.shape[-1]}")
    return _activate(x @ layer.weights.T + layer.bias, layer.activation)


@dataclass(slots=True, eq=False)
class DenseNetwork:
    layers: List[DenseLayer]

    @classmethod
    def initialize(cls, widths: Sequence[int], rng: np.random.Generator) -> "DenseNetwork":
        """``widths`` lists the input size then every layer width; the last layer is linear."""

        layers = []
        for index in range(1, len(widths)):
            activation = IDENTITY if index == len(widths) - 1 else RELU
            layers.append(DenseLayer.initialize(widths[index - 1], widths[index], activation, rng))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = dense_forward(layer, out)
        return out

    def parameter_blocks(self) -> List[Tuple[str, np.ndarray]]:
        blocks: List[Tuple[str, np.ndarray]] = []
        for index, layer in enumerate(self.layers):
            blocks.append((f"dense{index}.weights", layer.weights))
            blocks.append((f"dense{index}.bias", layer.bias))
        return blocks

    def forward_cached(
        self, x: np.ndarray
    ) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray]]]:
        cache: List[Tuple[np.ndarray, np.ndarray]] = []
        out = np.asarray(x, dtype=np.float64)
        if out.shape[-1] != self.in_dim:
            raise DimensionError(f"network expects {self.in_dim} inputs, got {out.shape[-1]}")
        for layer in self.layers:
            z = out @ layer.weights.T + layer.bias
            cache.append((out, z))
            out = _activate(z, layer.activation)
        return out, cache

    def backward_cached(
        self, cache: List[Tuple[np.ndarray, np.ndarray]], d_out: np.ndarray
    ) -> Tuple[List[np.ndarray], np.ndarray]:
        grads: List[np.ndarray] = []
        delta = d_out
        for layer, (layer_input, z) in zip(reversed(self.layers), reversed(cache)):
            if layer.activation == RELU:
                delta = delta * (z > 0)
            grads.append(delta.sum(axis=0))
            grads.append(delta.T @ layer_input)
            delta = delta @ layer.weights
        grads.reverse()
        return grads, delta


GATES = ("f", "i", "o", "c")


@dataclass(slots=True, eq=False)
class LstmLayer:
    """LSTM cell: sigmoid recurrent activation on f/i/o, tanh on the candidate and output."""

    w_f: np.ndarray
    w_i: np.ndarray
    w_o: np.ndarray
    w_c: np.ndarray
    u_f: np.ndarray
    u_i: np.ndarray
    u_o: np.ndarray
    u_c: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    def __post_init__(self) -> None:
        for name in self.block_names():
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        hidden, inputs = self.w_f.shape
        for gate in GATES:
            if getattr(self, f"w_{gate}").shape != (hidden, inputs):
                raise DimensionError(f"w_{gate} must be {(hidden, inputs)}")
            if getattr(self, f"u_{gate}").shape != (hidden, hidden):
                raise DimensionError(f"u_{gate} must be {(hidden, hidden)}")
            if getattr(self, f"b_{gate}").shape != (hidden,):
                raise DimensionError(f"b_{gate} must be {(hidden,)}")

    @staticmethod
    def block_names() -> List[str]:
        return [f"{kind}_{gate}" for kind in ("w", "u", "b") for gate in GATES]

    @classmethod
    def initialize(
        cls, in_dim: int, hidden: int, rng: np.random.Generator, forget_bias: float = 1.0
    ) -> "LstmLayer":
        blocks: Dict[str, np.ndarray] = {}
        for gate in GATES:
            blocks[f"w_{gate}"] = glorot_uniform(hidden, in_dim, rng)
        for gate in GATES:
            blocks[f"u_{gate}"] = glorot_uniform(hidden, hidden, rng)
        for gate in GATES:
            blocks[f"b_{gate}"] = np.full(hidden, forget_bias if gate == "f" else 0.0)
        return cls(**blocks)

    @property
    def in_dim(self) -> int:
        return self.w_f.shape[1]

    @property
    def hidden(self) -> int:
        return self.w_f.shape[0]


def _lstm_gates(
    layer: LstmLayer, x_t: np.ndarray, h_prev: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    f = sigmoid(x_t @ layer.w_f.T + h_prev @ layer.u_f.T + layer.b_f)
    i = sigmoid(x_t @ layer.w_i.T + h_prev @ layer.u_i.T + layer.b_i)
    o = sigmoid(x_t @ layer.w_o.T + h_prev @ layer.u_o.T + layer.b_o)
    g = np.tanh(x_t @ layer.w_c.T + h_prev @ layer.u_c.T + layer.b_c)
    return f, i, o, g


def lstm_step(
    layer: LstmLayer, x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    if x_t.shape[-1] != layer.in_dim:
        raise DimensionError(f"lstm expects {layer.in_dim} inputs, got {x_t.shape[-1]}")
    if h_prev.shape[-1] != layer.hidden or c_prev.shape[-1] != layer.hidden:
        raise DimensionError(f"hidden and cell state must have length {layer.hidden}")
    f, i, o, g = _lstm_gates(layer, x_t, h_prev)
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


@dataclass(slots=True, eq=False)
class LstmNetwork:
    """LSTM layer whose hidden state feeds a dense head at every step."""

    lstm: LstmLayer
    head: DenseNetwork

    @classmethod
    def initialize(
        cls, in_dim: int, hidden: int, head_widths: Sequence[int], rng: np.random.Generator
    ) -> "LstmNetwork":
        lstm = LstmLayer.initialize(in_dim, hidden, rng)
        head = DenseNetwork.initialize([hidden, *head_widths], rng)
        return cls(lstm, head)

    @property
    def in_dim(self) -> int:
        return self.lstm.in_dim

    def parameter_blocks(self) -> List[Tuple[str, np.ndarray]]:
        blocks = [(f"lstm.{name}", getattr(self.lstm, name)) for name in LstmLayer.block_names()]
        blocks.extend((f"head.{name}", array) for name, array in self.head.parameter_blocks())
        return blocks

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Returns the head output at every step, shape ``(batch, steps)``."""

        outputs, _ = self.forward_cached(x)
        return outputs

    def forward_cached(self, x: np.ndarray) -> Tuple[np.ndarray, Dict[str, object]]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.in_dim:
            raise DimensionError(f"lstm network expects (batch, steps, {self.in_dim}) input")
        batch, steps, _ = x.shape
        hidden = self.lstm.hidden
        h = np.zeros((batch, hidden))
        c = np.zeros((batch, hidden))
        states = []
        hs = np.empty((batch, steps, hidden))
        for t in range(steps):
            f, i, o, g = _lstm_gates(self.lstm, x[:, t], h)
            c_new = f * c + i * g
            tanh_c = np.tanh(c_new)
            h_new = o * tanh_c
            states.append((x[:, t], h, c, f, i, o, g, tanh_c))
            h, c = h_new, c_new
            hs[:, t] = h
        flat, head_cache = self.head.forward_cached(hs.reshape(batch * steps, hidden))
        outputs = flat.reshape(batch, steps)
        return outputs, {"states": states, "head": head_cache, "shape": (batch, steps)}

    def backward_cached(self, cache: Dict[str, object], d_out: np.ndarray) -> List[np.ndarray]:
        batch, steps = cache["shape"]  # type: ignore[misc]
        head_grads, d_hs = self.head.backward_cached(
            cache["head"], d_out.reshape(batch * steps, 1)  # type: ignore[arg-type]
        )
        d_hs = d_hs.reshape(batch, steps, self.lstm.hidden)
        grads = {name: np.zeros_like(getattr(self.lstm, name)) for name in LstmLayer.block_names()}
        dh_next = np.zeros((batch, self.lstm.hidden))
        dc_next = np.zeros((batch, self.lstm.hidden))
        for t in reversed(range(steps)):
            x_t, h_prev, c_prev, f, i, o, g, tanh_c = cache["states"][t]  # type: ignore[index]
            dh = d_hs[:, t] + dh_next
            do = dh * tanh_c
            dc = dh * o * (1.0 - tanh_c**2) + dc_next
            pre = {
                "f": dc * c_prev * f * (1.0 - f),
                "i": dc * g * i * (1.0 - i),
                "o": do * o * (1.0 - o),
                "c": dc * i * (1.0 - g**2),
            }
            dh_next = np.zeros_like(dh)
            for gate, delta in pre.items():
                grads[f"w_{gate}"] += delta.T @ x_t
                grads[f"u_{gate}"] += delta.T @ h_prev
                grads[f"b_{gate}"] += delta.sum(axis=0)
                dh_next += delta @ getattr(self.lstm, f"u_{gate}")
            dc_next = dc * f
        return [grads[name] for name in LstmLayer.block_names()] + head_grads


Network = Union[DenseNetwork, LstmNetwork]


def loss_value(prediction: np.ndarray, target: np.ndarray, loss: str) -> float:
    residual = np.asarray(prediction, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    if loss == MAE:
        return float(np.mean(np.abs(residual)))
    if loss == MSE:
        return float(np.mean(residual**2))
    raise TrainingError(f"unknown loss {loss!r}")


def loss_gradient(prediction: np.ndarray, target: np.ndarray, loss: str) -> np.ndarray:
    residual = np.asarray(prediction, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    if loss == MAE:
        # np.sign(0) == 0: subgradient 0 at a zero residual
        return np.sign(residual) / residual.size
    if loss == MSE:
        return 2.0 * residual / residual.size
    raise TrainingError(f"unknown loss {loss!r}")


def forward(network: Network, inputs: np.ndarray) -> np.ndarray:
    """Dense: ``(batch,)`` outputs. LSTM: ``(batch, steps)`` outputs."""

    if isinstance(network, LstmNetwork):
        return network.forward(inputs)
    return network.forward(inputs)[:, 0]


def backward(
    network: Network, inputs: np.ndarray, target: np.ndarray, loss: str = MAE
) -> Tuple[float, List[np.ndarray]]:
    """Loss and gradients aligned with ``network.parameter_blocks()``."""

    target = np.asarray(target, dtype=np.float64)
    if isinstance(network, LstmNetwork):
        outputs, cache = network.forward_cached(inputs)
        if outputs.shape != target.shape:
            raise DimensionError(f"targets {target.shape} do not match outputs {outputs.shape}")
        return (
            loss_value(outputs, target, loss),
            network.backward_cached(cache, loss_gradient(outputs, target, loss)),
        )
    outputs, cache = network.forward_cached(inputs)
    prediction = outputs[:, 0]
    if prediction.shape != target.shape:
        raise DimensionError(f"targets {target.shape} do not match outputs {prediction.shape}")
    d_out = loss_gradient(prediction, target, loss)[:, None]
    grads, _ = network.backward_cached(cache, d_out)
    return loss_value(prediction, target, loss), grads


@dataclass(slots=True)
class AdamState:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise TrainingError("Adam betas must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise TrainingError("learning rate must be positive")


def adam_step(
    state: AdamState,
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    names: Optional[Sequence[str]] = None,
) -> Sequence[np.ndarray]:
    """Updates ``params`` in place with bias-corrected Adam and returns them."""

    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameter blocks but {len(grads)} gradients")
    for index, (param, grad) in enumerate(zip(params, grads)):
        if param.shape != np.shape(grad):
            raise DimensionError(
                f"gradient shape {np.shape(grad)} != parameter shape {param.shape}"
            )
        if not np.isfinite(grad).all():
            label = names[index] if names else f"block {index}"
            raise TrainingError(f"non-finite gradient in {label}")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]

    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for param, grad, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad**2
        step_size = state.learning_rate * (m / correction1)
        param -= step_size / (np.sqrt(v / correction2) + state.epsilon)
    return params


def numerical_gradient(
    objective: Callable[[], float], param: np.ndarray, index: Tuple[int, ...], h: float = 1e-5
) -> float:
    original = param[index]
    param[index] = original + h
    upper = objective()
    param[index] = original - h
    lower = objective()
    param[index] = original
    return (upper - lower) / (2.0 * h)


def gradient_check(
    network: Network,
    inputs: np.ndarray,
    target: np.ndarray,
    loss: str = MSE,
    coordinates: int = 100,
    seed: int = 0,
    h: float = 1e-5,
) -> List[Tuple[str, float, float]]:
    """Analytical vs central-difference gradient on random coordinates."""

    rng = np.random.default_rng(seed)
    _, grads = backward(network, inputs, target, loss)
    blocks = network.parameter_blocks()

    def objective() -> float:
        return loss_value(forward(network, inputs), target, loss)

    checks: List[Tuple[str, float, float]] = []
    for _ in range(coordinates):
        block = int(rng.integers(len(blocks)))
        name, param = blocks[block]
        index = tuple(int(rng.integers(size)) for size in param.shape)
        numeric = numerical_gradient(objective, param, index, h)
        checks.append((f"{name}{list(index)}", float(grads[block][index]), numeric))
    return checks


def relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic) + abs(numeric), 1e-8)
    return abs(analytic - numeric) / scale
