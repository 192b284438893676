import math
from dataclasses import replace

import numpy as np
import pytest

from src.turbine_twin.errors import (
    ConfigurationError,
    InsufficientDataError,
    ModelChecksumError,
    ModelFormatError,
    ModelVersionError,
    SchemaError,
)
from src.turbine_twin.nom_training import (
    DENSE,
    LSTM,
    TrainingConfig,
    load_model,
    lstm_windows,
    model_filename,
    predict,
    predict_normalized,
    predict_series,
    residual_series,
    save_model,
    train_dense_nom,
    train_lstm_nom,
)
from src.turbine_twin.scada_ingest import ScadaSeries, fit_normalization
from tests.conftest import make_series

FAST = TrainingConfig(epochs=2, restarts=2, batch_size=32, lstm_window=6)
TARGET = "generator_rotor_temp"


@pytest.fixture(scope="module")
def training_series():
    return make_series(1500, seed=4)


@pytest.fixture(scope="module")
def dense_model(training_series):
    return train_dense_nom(training_series, TARGET, FAST)


def test_dense_training_is_deterministic(training_series, dense_model) -> None:
    again = train_dense_nom(training_series, TARGET, FAST)

    assert again.fingerprint == dense_model.fingerprint
    for (_, left), (_, right) in zip(
        again.network.parameter_blocks(), dense_model.network.parameter_blocks()
    ):
        np.testing.assert_array_equal(left, right)


def test_dense_model_shape_and_fingerprint(dense_model) -> None:
    assert dense_model.kind == DENSE
    assert dense_model.input_channels[dense_model.target_index] == TARGET
    assert [layer.out_dim for layer in dense_model.network.layers] == [8, 5, 1]
    assert dense_model.network.in_dim == 8
    assert dense_model.fingerprint.seed in FAST.seeds
    assert 0.0 <= dense_model.fingerprint.holdout_mae < 1.0


def test_predict_skips_frames_with_missing_inputs(training_series, dense_model) -> None:
    frame = training_series.frame(10)
    values = dict(frame.values)
    values["ambient_temp"] = None
    broken = type(frame)(frame.timestamp, values, frame.status_code, frame.operational_code)

    assert predict(dense_model, broken) is None
    normalized = predict_normalized(dense_model, frame)
    assert normalized is not None
    denormalized = predict(dense_model, frame)
    assert denormalized == pytest.approx(
        dense_model.normalization.denormalize_channel(normalized, TARGET)
    )


def test_batch_predictions_match_single_frames(dense_model) -> None:
    series = make_series(50, seed=9)
    series.values[7, 0] = np.nan

    predictions = predict_series(dense_model, series)
    residuals = residual_series(dense_model, series)

    assert math.isnan(predictions[7]) and math.isnan(residuals[7])
    for index in (0, 12, 49):
        assert predictions[index] == pytest.approx(predict(dense_model, series.frame(index)))
    actual = dense_model.normalization.normalize_channel(series.column(TARGET)[12], TARGET)
    expected = (predict_normalized(dense_model, series.frame(12)) - actual) ** 2
    assert residuals[12] == pytest.approx(expected)


def test_model_file_round_trip(tmp_path, training_series, dense_model) -> None:
    path = save_model(dense_model, tmp_path / model_filename(TARGET, DENSE))

    loaded = load_model(path)

    assert path.name == "generator_rotor_temp.dense.nom"
    assert loaded.fingerprint == dense_model.fingerprint
    np.testing.assert_array_equal(
        predict_series(loaded, training_series), predict_series(dense_model, training_series)
    )


def test_model_file_integrity_errors(tmp_path, dense_model) -> None:
    path = save_model(dense_model, tmp_path / "model.nom")
    text = path.read_text(encoding="utf-8")

    tampered = tmp_path / "tampered.nom"
    tampered.write_text(text.replace('"kind": "dense"', '"kind": "lstm"'), encoding="utf-8")
    with pytest.raises(ModelChecksumError):
        load_model(tampered)

    future = tmp_path / "future.nom"
    future.write_text(text.replace("format_version: 1", "format_version: 2"), encoding="utf-8")
    with pytest.raises(ModelVersionError):
        load_model(future)

    truncated = tmp_path / "truncated.nom"
    truncated.write_text("\n".join(text.split("\n")[:2]), encoding="utf-8")
    with pytest.raises(ModelChecksumError):
        load_model(truncated)

    foreign = tmp_path / "foreign.nom"
    foreign.write_text("{}", encoding="utf-8")
    with pytest.raises(ModelFormatError):
        load_model(foreign)


def test_exogenous_target_is_rejected(training_series) -> None:
    with pytest.raises(SchemaError):
        train_dense_nom(training_series, "rotor_rpm", FAST)


def test_too_few_samples(training_series) -> None:
    with pytest.raises(InsufficientDataError):
        train_dense_nom(training_series.take(slice(0, 10)), TARGET, FAST)


def test_training_config_validation() -> None:
    with pytest.raises(ConfigurationError):
        TrainingConfig(restarts=0)
    with pytest.raises(ConfigurationError):
        TrainingConfig(loss="huber")
    assert TrainingConfig(seed=5, restarts=3).seeds == [5, 6, 7]


def test_lstm_windows_skip_gaps_and_missing_rows() -> None:
    normalized = np.ones((12, 2))
    normalized[3, 1] = np.nan
    contiguous = np.ones(12, dtype=bool)
    contiguous[0] = False
    contiguous[8] = False

    starts = lstm_windows(normalized, contiguous, 3)

    assert starts.tolist() == [0, 4, 8]


def test_lstm_training_and_prediction(training_series) -> None:
    cfg = TrainingConfig(epochs=1, restarts=1, lstm_window=6, batch_size=16)
    params = fit_normalization(training_series)

    model = train_lstm_nom(training_series, TARGET, cfg, params)

    assert model.kind == LSTM
    assert model.window == 6
    assert model.context_length == 5
    series = training_series.take(slice(0, 40))
    predictions = predict_series(model, series)
    assert np.isnan(predictions[:5]).all()
    assert np.isfinite(predictions[5:]).all()

    history = [series.frame(index) for index in range(10, 15)]
    assert predictions[15] == pytest.approx(predict(model, history))
    assert predict(model, history[1:]) is None


def _linear_system(minutes: int, seed: int) -> ScadaSeries:
    """Rotor temperature = 0.5 * rpm + 0.3 * ambient plus small noise, on unit-range inputs."""

    series = make_series(minutes, seed=seed)
    rng = np.random.default_rng(seed + 100)
    t = np.arange(minutes)
    rpm = 0.5 + 0.5 * np.sin(2 * np.pi * t / 97.0 + rng.uniform(0, 6.0))
    ambient = 0.5 + 0.5 * np.cos(2 * np.pi * t / 389.0 + rng.uniform(0, 6.0))
    values = series.values.copy()
    values[:, series.index_of("rotor_rpm")] = rpm
    values[:, series.index_of("ambient_temp")] = ambient
    values[:, series.index_of(TARGET)] = 0.5 * rpm + 0.3 * ambient + rng.normal(0, 0.01, minutes)
    return replace(series, values=values)


def test_dense_nom_learns_a_linear_system() -> None:
    train = _linear_system(4000, seed=1)
    test = _linear_system(1000, seed=2)

    model = train_dense_nom(train, TARGET, TrainingConfig(epochs=20, restarts=1))

    mae = float(np.nanmean(np.sqrt(residual_series(model, test))))
    assert mae < 0.02
