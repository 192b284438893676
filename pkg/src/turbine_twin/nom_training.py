"""Normal-operation models: one single-output network per endogenous channel.

Dense models map the full normalized frame at t to the target at t. LSTM models
read a window of frames ending at t and predict the target at t + 1.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    ConfigurationError,
    InsufficientDataError,
    ModelChecksumError,
    ModelFormatError,
    ModelVersionError,
    SchemaError,
)
from .nn_core import (
    LOSSES,
    MAE,
    DenseLayer,
    DenseNetwork,
    LstmLayer,
    LstmNetwork,
    Network,
    AdamState,
    adam_step,
    backward,
    forward,
)
from .scada_ingest import (
    MINUTE,
    NormalizationParams,
    Partition,
    ScadaFrame,
    ScadaSeries,
    apply_normalization,
    fit_normalization,
)

LOGGER = logging.getLogger(__name__)

DENSE = "dense"
LSTM = "lstm"
MODEL_KINDS = (DENSE, LSTM)

HIDDEN_WIDTHS = (8, 5, 1)
HEAD_WIDTHS = (5, 1)

MODEL_HEADER = "# turbine-twin nom"
FORMAT_VERSION = 1

# rows per forward pass in batch prediction
_PREDICT_CHUNK = 4096


@dataclass(slots=True)
class TrainingConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 5
    restarts: int = 3
    loss: str = MAE
    lstm_window: int = 30
    selection_holdout_fraction: float = 0.1
    seed: int = 1
    lstm_hidden: int = 8

    def __post_init__(self) -> None:
        if self.restarts < 1:
            raise ConfigurationError("training.restarts must be >= 1")
        if self.lstm_window < 2:
            raise ConfigurationError("training.lstm_window must be >= 2")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("training.batch_size and training.epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("training.learning_rate must be positive")
        if self.loss not in LOSSES:
            raise ConfigurationError(f"training.loss must be one of {LOSSES}")
        if not 0.0 <= self.selection_holdout_fraction < 1.0:
            raise ConfigurationError("training.selection_holdout_fraction must lie in [0, 1)")

    @property
    def seeds(self) -> List[int]:
        return [self.seed + offset for offset in range(self.restarts)]


@dataclass(frozen=True, slots=True)
class TrainingFingerprint:
    seed: int
    epochs: int
    train_mae: float
    holdout_mae: float


@dataclass(slots=True, eq=False)
class NomModel:
    kind: str
    target_channel: str
    network: Network
    normalization: NormalizationParams
    fingerprint: TrainingFingerprint
    window: int = 1

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ModelFormatError(f"unknown model kind {self.kind!r}")
        if self.target_channel not in self.normalization.channels:
            raise SchemaError(f"target {self.target_channel!r} is not a model input")

    @property
    def input_channels(self) -> Tuple[str, ...]:
        return self.normalization.channels

    @property
    def target_index(self) -> int:
        return self.normalization.index_of(self.target_channel)

    @property
    def context_length(self) -> int:
        """Frames of input needed for one prediction."""

        return self.window - 1 if self.kind == LSTM else 1


def _usable_rows(normalized: np.ndarray) -> np.ndarray:
    return np.isfinite(normalized).all(axis=1)


def _split_holdout(count: int, fraction: float) -> int:
    """Index where the chronological holdout starts; ``count`` when there is none."""

    held = int(count * fraction)
    if held == 0 or held == count:
        return count
    return count - held


def _series_of(train: Union[Partition, ScadaSeries]) -> ScadaSeries:
    return train.series if isinstance(train, Partition) else train


def _check_target(series: ScadaSeries, target: str) -> None:
    channel = series.channels[series.index_of(target)]
    if not channel.is_endogenous:
        raise SchemaError(f"{target!r} is exogenous and cannot be a model target")


def _mae(network: Network, inputs: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean(np.abs(forward(network, inputs) - targets)))


def _fit(
    network: Network,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainingConfig,
    rng: np.random.Generator,
) -> None:
    blocks = network.parameter_blocks()
    names = [name for name, _ in blocks]
    params = [array for _, array in blocks]
    state = AdamState(learning_rate=cfg.learning_rate)
    count = len(inputs)
    for _ in range(cfg.epochs):
        order = rng.permutation(count)
        for start in range(0, count, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grads = backward(network, inputs[batch], targets[batch], cfg.loss)
            adam_step(state, params, grads, names)


def _select(
    kind: str,
    target: str,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainingConfig,
    params: NormalizationParams,
) -> NomModel:
    boundary = _split_holdout(len(inputs), cfg.selection_holdout_fraction)
    fit_x, fit_y = inputs[:boundary], targets[:boundary]
    if boundary < len(inputs):
        hold_x, hold_y = inputs[boundary:], targets[boundary:]
    else:
        hold_x, hold_y = fit_x, fit_y

    best: Optional[NomModel] = None
    for seed in cfg.seeds:
        rng = np.random.default_rng(seed)
        if kind == DENSE:
            network: Network = DenseNetwork.initialize([inputs.shape[-1], *HIDDEN_WIDTHS], rng)
        else:
            network = LstmNetwork.initialize(inputs.shape[-1], cfg.lstm_hidden, HEAD_WIDTHS, rng)
        _fit(network, fit_x, fit_y, cfg, rng)
        fingerprint = TrainingFingerprint(
            seed=seed,
            epochs=cfg.epochs,
            train_mae=_mae(network, fit_x, fit_y),
            holdout_mae=_mae(network, hold_x, hold_y),
        )
        LOGGER.info(
            "[Train] channel=%s kind=%s seed=%s train_mae=%.6f holdout_mae=%.6f",
            target,
            kind,
            seed,
            fingerprint.train_mae,
            fingerprint.holdout_mae,
        )
        candidate = NomModel(
            kind=kind,
            target_channel=target,
            network=network,
            normalization=params,
            fingerprint=fingerprint,
            window=cfg.lstm_window if kind == LSTM else 1,
        )
        if best is None or fingerprint.holdout_mae < best.fingerprint.holdout_mae:
            best = candidate
    assert best is not None
    LOGGER.info("[Train] channel=%s kind=%s selected seed=%s", target, kind, best.fingerprint.seed)
    return best


def train_dense_nom(
    train: Union[Partition, ScadaSeries],
    target: str,
    cfg: TrainingConfig = TrainingConfig(),
    normalization: Optional[NormalizationParams] = None,
) -> NomModel:
    series = _series_of(train)
    _check_target(series, target)
    params = normalization or fit_normalization(series)
    normalized = apply_normalization(series, params)
    rows = _usable_rows(normalized)
    inputs = normalized[rows]
    if len(inputs) < cfg.batch_size:
        raise InsufficientDataError(
            f"{len(inputs)} usable samples for {target!r}, need at least {cfg.batch_size}"
        )
    targets = inputs[:, params.index_of(target)].copy()
    return _select(DENSE, target, inputs, targets, cfg, params)


def lstm_windows(normalized: np.ndarray, contiguous: np.ndarray, window: int) -> np.ndarray:
    """Start indices of non-overlapping gap-free windows of ``window`` rows.

    ``contiguous[i]`` is true when row i directly follows row i - 1.
    """

    usable = _usable_rows(normalized)
    starts: List[int] = []
    run_start = None
    for index in range(len(normalized)):
        if not usable[index]:
            run_start = None
            continue
        if run_start is None or not contiguous[index]:
            run_start = index
        if index - run_start + 1 == window:
            starts.append(run_start)
            run_start = None
    return np.array(starts, dtype=np.int64)


def train_lstm_nom(
    train: Union[Partition, ScadaSeries],
    target: str,
    cfg: TrainingConfig = TrainingConfig(),
    normalization: Optional[NormalizationParams] = None,
) -> NomModel:
    series = _series_of(train)
    _check_target(series, target)
    params = normalization or fit_normalization(series)
    normalized = apply_normalization(series, params)
    starts = lstm_windows(normalized, series.minute_steps(), cfg.lstm_window)
    if len(starts) == 0:
        raise InsufficientDataError(
            f"no gap-free window of {cfg.lstm_window} minutes for {target!r}"
        )
    offsets = starts[:, None] + np.arange(cfg.lstm_window)[None, :]
    windows = normalized[offsets]
    inputs = windows[:, :-1, :]
    targets = windows[:, 1:, params.index_of(target)].copy()
    LOGGER.info("[Train] channel=%s lstm windows=%s", target, len(starts))
    return _select(LSTM, target, inputs, targets, cfg, params)


def _normalized_input(model: NomModel, frame: ScadaFrame) -> Optional[np.ndarray]:
    row = apply_normalization(frame, model.normalization)
    return row if np.isfinite(row).all() else None


def predict_normalized(
    model: NomModel, context: Union[ScadaFrame, Sequence[ScadaFrame]]
) -> Optional[float]:
    """Target prediction in normalized units, or ``None`` when an input is missing.

    Dense models use the frame at t. LSTM models take the frames ending at t
    (at least ``context_length`` consecutive minutes) and predict t + 1.
    """

    frames = [context] if isinstance(context, ScadaFrame) else list(context)
    if not frames:
        return None
    if model.kind == DENSE:
        row = _normalized_input(model, frames[-1])
        if row is None:
            return None
        return float(forward(model.network, row[None, :])[0])

    frames = frames[-model.context_length :]
    if len(frames) < model.context_length:
        return None
    for previous, current in zip(frames, frames[1:]):
        if current.timestamp - previous.timestamp != MINUTE:
            return None
    rows = [_normalized_input(model, frame) for frame in frames]
    if any(row is None for row in rows):
        return None
    batch = np.stack([row for row in rows if row is not None])[None, :, :]
    return float(forward(model.network, batch)[0, -1])


def predict(
    model: NomModel, context: Union[ScadaFrame, Sequence[ScadaFrame]]
) -> Optional[float]:
    """Denormalized target prediction, or ``None`` when the model is not evaluable."""

    output = predict_normalized(model, context)
    if output is None:
        return None
    return model.normalization.denormalize_channel(output, model.target_channel)


def _predict_normalized(model: NomModel, series: ScadaSeries) -> np.ndarray:
    normalized = apply_normalization(series, model.normalization)
    n = len(series)
    out = np.full(n, np.nan)
    if n == 0:
        return out
    usable = _usable_rows(normalized)
    if model.kind == DENSE:
        rows = np.flatnonzero(usable)
        for start in range(0, len(rows), _PREDICT_CHUNK):
            chunk = rows[start : start + _PREDICT_CHUNK]
            out[chunk] = forward(model.network, normalized[chunk])
        return out

    length = model.context_length
    if n <= length:
        return out
    steps = series.minute_steps()
    # t is evaluable when rows t-length..t-1 are usable and rows t-length+1..t are one minute apart
    bad = (~usable).astype(np.int64)
    gaps = (~steps).astype(np.int64)
    bad_sum = np.concatenate(([0], np.cumsum(bad)))
    gap_sum = np.concatenate(([0], np.cumsum(gaps)))
    targets = np.arange(length, n)
    missing = bad_sum[targets] - bad_sum[targets - length]
    broken = gap_sum[targets + 1] - gap_sum[targets - length + 1]
    evaluable = targets[(missing == 0) & (broken == 0)]
    window = np.arange(-length, 0)
    for start in range(0, len(evaluable), _PREDICT_CHUNK):
        chunk = evaluable[start : start + _PREDICT_CHUNK]
        batch = normalized[chunk[:, None] + window[None, :]]
        out[chunk] = forward(model.network, batch)[:, -1]
    return out


def predict_series(model: NomModel, series: ScadaSeries) -> np.ndarray:
    """Denormalized predictions aligned to ``series`` rows; NaN where not evaluable."""

    index = model.target_index
    params = model.normalization
    return _predict_normalized(model, series) * params.scale[index] + params.minimum[index]


def residual_series(model: NomModel, series: ScadaSeries) -> np.ndarray:
    """Squared residual in normalized units per row; NaN where not evaluable."""

    actual = apply_normalization(series, model.normalization)[:, model.target_index]
    return (_predict_normalized(model, series) - actual) ** 2


# persistence


def _dense_layers_to_list(network: DenseNetwork) -> List[Dict[str, object]]:
    return [
        {
            "activation": layer.activation,
            "weights": layer.weights.tolist(),
            "bias": layer.bias.tolist(),
        }
        for layer in network.layers
    ]


def _dense_layers_from_list(payload: Sequence[Mapping[str, Any]]) -> DenseNetwork:
    return DenseNetwork(
        [
            DenseLayer(
                np.array(layer["weights"], dtype=np.float64),
                np.array(layer["bias"], dtype=np.float64),
                str(layer["activation"]),
            )
            for layer in payload
        ]
    )


def model_to_dict(model: NomModel) -> Dict[str, object]:
    if isinstance(model.network, LstmNetwork):
        network: Dict[str, object] = {
            "lstm": {
                name: getattr(model.network.lstm, name).tolist()
                for name in LstmLayer.block_names()
            },
            "head": _dense_layers_to_list(model.network.head),
        }
    else:
        network = {"layers": _dense_layers_to_list(model.network)}
    return {
        "kind": model.kind,
        "target_channel": model.target_channel,
        "input_channels": list(model.input_channels),
        "window": model.window,
        "normalization": model.normalization.to_dict(),
        "fingerprint": asdict(model.fingerprint),
        "network": network,
    }


def model_from_dict(payload: Mapping[str, Any]) -> NomModel:
    try:
        kind = str(payload["kind"])
        network_payload = payload["network"]
        if kind == LSTM:
            lstm = LstmLayer(
                **{
                    name: np.array(values, dtype=np.float64)
                    for name, values in network_payload["lstm"].items()
                }
            )
            network: Network = LstmNetwork(
                lstm, _dense_layers_from_list(network_payload["head"])
            )
        else:
            network = _dense_layers_from_list(network_payload["layers"])
        normalization = NormalizationParams.from_dict(payload["normalization"])
        if list(normalization.channels) != list(payload["input_channels"]):
            raise ModelFormatError("input channel order does not match normalization")
        return NomModel(
            kind=kind,
            target_channel=str(payload["target_channel"]),
            network=network,
            normalization=normalization,
            fingerprint=TrainingFingerprint(**payload["fingerprint"]),
            window=int(payload["window"]),
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise ModelFormatError(f"malformed model body: {exc}") from exc


def save_model(model: NomModel, path: Path) -> Path:
    """Writes header, format version, body checksum and a JSON body."""

    body = json.dumps(model_to_dict(model)) + "\n"
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        f"{MODEL_HEADER}\nformat_version: {FORMAT_VERSION}\nchecksum: sha256:{digest}\n{body}",
        encoding="utf-8",
    )
    LOGGER.info("[Train] saved %s model for %s to %s", model.kind, model.target_channel, path)
    return path


def load_model(path: Path) -> NomModel:
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n", 3)
    if not lines or lines[0] != MODEL_HEADER:
        raise ModelFormatError(f"{path} is not a turbine-twin model file")
    if len(lines) < 2 or not lines[1].startswith("format_version:"):
        raise ModelChecksumError(f"{path} is truncated before the format version")
    try:
        version = int(lines[1].split(":", 1)[1])
    except ValueError as exc:
        raise ModelFormatError(f"{path}: unreadable format version {lines[1]!r}") from exc
    if version != FORMAT_VERSION:
        raise ModelVersionError(
            f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    if len(lines) < 4 or not lines[2].startswith("checksum: sha256:"):
        raise ModelChecksumError(f"{path} is truncated before the checksum")
    expected = lines[2].split("sha256:", 1)[1].strip()
    body = lines[3]
    actual = hashlib.sha256(body.encode("utf-8")).hexdigest()
    if actual != expected:
        raise ModelChecksumError(f"{path}: checksum mismatch (expected {expected}, got {actual})")
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: body is not valid JSON") from exc
    return model_from_dict(payload)


def model_filename(channel: str, kind: str) -> str:
    return f"{channel}.{kind}.nom"

