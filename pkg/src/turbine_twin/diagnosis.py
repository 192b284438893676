"""Exact Shapley attributions for dense models and the three-case anomaly diagnosis."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .anomaly_detector import MEASUREMENT_ANOMALY, AnomalyEvent
from .errors import CalibrationError, ConfigurationError, UnsupportedModelError
from .nn_core import DenseNetwork, forward
from .nom_training import DENSE, NomModel
from .scada_ingest import (
    OperatingMask,
    Partition,
    ScadaFrame,
    ScadaSeries,
    apply_normalization,
    format_timestamps,
)

LOGGER = logging.getLogger(__name__)

CASE_DOMINANT_SELF = 1
CASE_OUTPUT_SIGNAL = 2
CASE_CORRUPTED_INPUT = 3


@dataclass(frozen=True, slots=True, eq=False)
class AttributionVector:
    channels: Tuple[str, ...]
    contributions: np.ndarray
    base_value: float
    output: float

    def contribution(self, channel: str) -> float:
        return float(self.contributions[self.channels.index(channel)])

    @property
    def total_impact(self) -> float:
        return float(np.abs(self.contributions).sum())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "base_value": self.base_value,
            "output": self.output,
            "contributions": {
                channel: float(value) for channel, value in zip(self.channels, self.contributions)
            },
        }


def _require_dense(model: NomModel) -> DenseNetwork:
    if model.kind != DENSE or not isinstance(model.network, DenseNetwork):
        raise UnsupportedModelError(f"attribution needs a dense model, got {model.kind!r}")
    return model.network


def _coalition_weights(n: int) -> np.ndarray:
    return np.array(
        [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)]
    )


def shapley_exact(
    model: NomModel, x: np.ndarray, background: np.ndarray
) -> AttributionVector:
    """Exact interventional Shapley values of the model output at ``x``.

    ``x`` and ``background`` are in normalized units. The value of a coalition is
    the background-averaged output with features outside it taken from the
    background row.
    """

    network = _require_dense(model)
    x = np.asarray(x, dtype=np.float64)
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    n = x.shape[0]
    if background.shape[0] == 0:
        raise CalibrationError("background set is empty")
    if background.shape[1] != n:
        raise ConfigurationError(f"background has {background.shape[1]} features, input has {n}")

    codes = np.arange(1 << n)
    members = ((codes[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    mixed = np.where(members[:, None, :], x[None, None, :], background[None, :, :])
    outputs = forward(network, mixed.reshape(-1, n)).reshape(len(codes), len(background))
    value = outputs.mean(axis=1)

    weights = _coalition_weights(n)
    sizes = members.sum(axis=1)
    contributions = np.empty(n)
    for feature in range(n):
        without = codes[~members[:, feature]]
        with_feature = without | (1 << feature)
        contributions[feature] = float(
            np.sum(weights[sizes[without]] * (value[with_feature] - value[without]))
        )
    return AttributionVector(
        channels=model.input_channels,
        contributions=contributions,
        base_value=float(value[0]),
        output=float(value[-1]),
    )


def attribute_frame(
    model: NomModel, frame: Union[ScadaFrame, np.ndarray], background: np.ndarray
) -> Optional[AttributionVector]:
    """Attribution for a raw frame; ``None`` when an input is missing."""

    row = apply_normalization(frame, model.normalization)
    if not np.isfinite(row).all():
        return None
    return shapley_exact(model, row, background)


@dataclass(slots=True, eq=False)
class ShapCalibration:
    """One model's row of D_S2 limits plus the sampled training attributions."""

    channel: str
    limits: Dict[str, float]
    background: np.ndarray
    sample_times: pd.DatetimeIndex
    sample_contributions: np.ndarray


def _usable_training_rows(
    train: Union[Partition, ScadaSeries], model: NomModel, mask: Optional[OperatingMask]
) -> Tuple[ScadaSeries, np.ndarray]:
    if isinstance(train, Partition):
        series, mask = train.series, mask or train.mask
    else:
        series = train
    normalized = apply_normalization(series, model.normalization)
    usable = np.isfinite(normalized).all(axis=1)
    if mask is not None:
        usable &= ~mask.is_excluded()
    return series, np.flatnonzero(usable)


def draw_background(
    model: NomModel,
    train: Union[Partition, ScadaSeries],
    mask: Optional[OperatingMask] = None,
    size: int = 100,
    seed: int = 0,
) -> np.ndarray:
    series, rows = _usable_training_rows(train, model, mask)
    if rows.size == 0:
        raise CalibrationError(f"no usable training rows for {model.target_channel!r}")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(rows, size=min(size, rows.size), replace=False))
    return apply_normalization(series.take(chosen), model.normalization)


def calibrate_shap_thresholds(
    model: NomModel,
    train: Union[Partition, ScadaSeries],
    mask: Optional[OperatingMask] = None,
    samples: int = 1000,
    factor: float = 1.2,
    background_size: int = 100,
    seed: int = 0,
) -> ShapCalibration:
    """D_S2 per input: ``factor`` times the largest |SHAP| over sampled training rows."""

    _require_dense(model)
    series, rows = _usable_training_rows(train, model, mask)
    if rows.size == 0:
        raise CalibrationError(f"no evaluable training sample for {model.target_channel!r}")
    background = draw_background(model, train, mask, background_size, seed)
    rng = np.random.default_rng(seed + 1)
    chosen = np.sort(rng.choice(rows, size=min(samples, rows.size), replace=False))
    normalized = apply_normalization(series.take(chosen), model.normalization)
    contributions = np.stack(
        [shapley_exact(model, row, background).contributions for row in normalized]
    )
    peaks = np.abs(contributions).max(axis=0)
    limits = {channel: float(factor * peak) for channel, peak in zip(model.input_channels, peaks)}
    LOGGER.info(
        "[Diagnosis] channel=%s samples=%s D_S2=%s", model.target_channel, len(chosen), limits
    )
    return ShapCalibration(
        channel=model.target_channel,
        limits=limits,
        background=background,
        sample_times=series.timestamps[chosen],
        sample_contributions=contributions,
    )


@dataclass(slots=True, eq=False)
class DiagnosisThresholds:
    dominance_fraction: float = 0.7
    shap_factor: float = 1.2
    limits: Dict[str, Dict[str, float]] = field(default_factory=dict)
    backgrounds: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 < self.dominance_fraction < 1.0:
            raise ConfigurationError("diagnosis.dominance_fraction must lie in (0, 1)")
        for row in self.limits.values():
            if any(value < 0 for value in row.values()):
                raise CalibrationError("D_S2 limits must be non-negative")

    @classmethod
    def from_calibrations(
        cls,
        calibrations: Sequence[ShapCalibration],
        dominance_fraction: float = 0.7,
        shap_factor: float = 1.2,
    ) -> "DiagnosisThresholds":
        return cls(
            dominance_fraction=dominance_fraction,
            shap_factor=shap_factor,
            limits={item.channel: dict(item.limits) for item in calibrations},
            backgrounds={item.channel: item.background for item in calibrations},
        )

    def row(self, channel: str) -> Dict[str, float]:
        try:
            return self.limits[channel]
        except KeyError as exc:
            raise CalibrationError(f"no SHAP thresholds for {channel!r}") from exc

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dominance_fraction": self.dominance_fraction,
            "shap_factor": self.shap_factor,
            "limits": self.limits,
            "backgrounds": {key: value.tolist() for key, value in self.backgrounds.items()},
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "DiagnosisThresholds":
        return cls(
            dominance_fraction=float(payload["dominance_fraction"]),
            shap_factor=float(payload["shap_factor"]),
            limits={
                channel: {key: float(value) for key, value in row.items()}
                for channel, row in payload["limits"].items()
            },
            backgrounds={
                channel: np.array(rows, dtype=np.float64)
                for channel, rows in payload.get("backgrounds", {}).items()
            },
        )


@dataclass(frozen=True, slots=True, eq=False)
class DiagnosisReport:
    case: int
    responsible_channels: Tuple[str, ...]
    attribution: AttributionVector
    narrative: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "case": self.case,
            "responsible_channels": list(self.responsible_channels),
            "narrative": self.narrative,
            **self.attribution.to_dict(),
        }


def diagnose(
    event: Optional[AnomalyEvent],
    model: NomModel,
    attribution: AttributionVector,
    thresholds: DiagnosisThresholds,
) -> DiagnosisReport:
    """Case 1 (own signal dominates) is checked before case 3 (inputs above D_S2)."""

    target = model.target_channel
    own = abs(attribution.contribution(target))
    total = attribution.total_impact
    if total > 0 and own > thresholds.dominance_fraction * total:
        share = own / total
        return DiagnosisReport(
            CASE_DOMINANT_SELF,
            (target,),
            attribution,
            f"{target} dominates its own prediction ({share:.0%} of total impact)",
        )

    limits = thresholds.row(target)
    exceeding = [
        (abs(value), channel)
        for channel, value in zip(attribution.channels, attribution.contributions)
        if abs(value) > limits.get(channel, math.inf)
    ]
    if exceeding:
        exceeding.sort(key=lambda item: (-item[0], item[1]))
        channels = tuple(channel for _, channel in exceeding)
        return DiagnosisReport(
            CASE_CORRUPTED_INPUT,
            channels,
            attribution,
            f"inputs contribute beyond normal operation: {', '.join(channels)}",
        )

    where = f" at {event.timestamp}" if event is not None else ""
    return DiagnosisReport(
        CASE_OUTPUT_SIGNAL,
        (target,),
        attribution,
        f"anomaly{where} attributed to the measured {target} signal",
    )


def diagnose_frame(
    event: AnomalyEvent,
    frame: ScadaFrame,
    model: NomModel,
    thresholds: DiagnosisThresholds,
) -> Optional[DiagnosisReport]:
    background = thresholds.backgrounds.get(model.target_channel)
    if background is None:
        raise CalibrationError(f"no background set for {model.target_channel!r}")
    attribution = attribute_frame(model, frame, background)
    if attribution is None:
        return None
    return diagnose(event, model, attribution, thresholds)


def diagnose_episodes(
    events: Sequence[AnomalyEvent],
    series: ScadaSeries,
    models: Mapping[str, NomModel],
    thresholds: DiagnosisThresholds,
) -> int:
    """Attaches a diagnosis to the first event of every measurement episode."""

    positions = {stamp: index for index, stamp in enumerate(series.timestamps)}
    diagnosed = 0
    for event in events:
        if event.kind != MEASUREMENT_ANOMALY or not event.opens_episode:
            continue
        model = models.get(event.channel)
        if model is None or model.kind != DENSE:
            continue
        frame = series.frame(positions[event.timestamp])
        event.diagnosis = diagnose_frame(event, frame, model, thresholds)
        diagnosed += event.diagnosis is not None
    return diagnosed


def attribution_table(
    timestamps: Sequence[pd.Timestamp], attributions: Sequence[AttributionVector]
) -> pd.DataFrame:
    """One row per timestep, one column per input channel."""

    if not attributions:
        return pd.DataFrame(columns=["timestamp"])
    frame = pd.DataFrame(
        np.stack([item.contributions for item in attributions]),
        columns=list(attributions[0].channels),
    )
    frame.insert(0, "timestamp", format_timestamps(pd.DatetimeIndex(timestamps)))
    return frame


def episode_attributions(
    events: Sequence[AnomalyEvent],
    series: ScadaSeries,
    model: NomModel,
    background: np.ndarray,
) -> Tuple[List[pd.Timestamp], List[AttributionVector]]:
    """Attributions at every flagged timestep of ``model``'s channel."""

    positions = {stamp: index for index, stamp in enumerate(series.timestamps)}
    stamps: List[pd.Timestamp] = []
    vectors: List[AttributionVector] = []
    for event in events:
        if event.kind != MEASUREMENT_ANOMALY or event.channel != model.target_channel:
            continue
        attribution = attribute_frame(model, series.frame(positions[event.timestamp]), background)
        if attribution is not None:
            stamps.append(event.timestamp)
            vectors.append(attribution)
    return stamps, vectors
