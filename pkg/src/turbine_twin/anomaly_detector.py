"""Threshold calibration, the streaming detector state machine and the coincidence probability."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Deque, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import CalibrationError, ConfigurationError, ProbabilityError, StreamError
from .nom_training import NomModel, predict_normalized, residual_series
from .scada_ingest import (
    MINUTE,
    FaultRecord,
    MaskLabel,
    OperatingMask,
    Partition,
    ScadaFrame,
    ScadaSeries,
    StatusMapping,
    format_timestamps,
    parse_timestamp,
)

LOGGER = logging.getLogger(__name__)

MEASUREMENT_ANOMALY = "measurement-anomaly"
SENSOR_ANOMALY = "sensor-anomaly"
EXTENDED_REHEATING = "suppressed-extended-reheating"
EVENT_KINDS = (MEASUREMENT_ANOMALY, SENSOR_ANOMALY, EXTENDED_REHEATING)
ALERTABLE_KINDS = (MEASUREMENT_ANOMALY, SENSOR_ANOMALY)

MODE_NORMAL = "normal"
MODE_DOWNTIME = "downtime"
MODE_REHEATING = "reheating"
MODE_EXTENDED = "extended-reheating"


@dataclass(frozen=True, slots=True)
class ThresholdSet:
    """Per-channel D_ER; the alarm threshold D is ``safety_factor * D_ER``."""

    extended_reheating: Mapping[str, float]
    safety_factor: float = 1.2
    kind: str = "dense"

    def __post_init__(self) -> None:
        if self.safety_factor <= 0:
            raise ConfigurationError("detector.safety_factor must be positive")
        for channel, value in self.extended_reheating.items():
            if not value > 0:
                raise CalibrationError(f"threshold for {channel!r} must be positive, got {value}")

    @property
    def channels(self) -> List[str]:
        return list(self.extended_reheating)

    def limit(self, channel: str) -> float:
        return self.safety_factor * self.extended_reheating[channel]

    def settle(self, channel: str) -> float:
        return self.extended_reheating[channel]

    def with_safety_factor(self, safety_factor: float) -> "ThresholdSet":
        return replace(self, safety_factor=safety_factor)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "safety_factor": self.safety_factor,
            "channels": {
                channel: {"D": self.limit(channel), "D_ER": value}
                for channel, value in self.extended_reheating.items()
            },
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ThresholdSet":
        return cls(
            extended_reheating={
                channel: float(entry["D_ER"]) for channel, entry in payload["channels"].items()
            },
            safety_factor=float(payload["safety_factor"]),
            kind=str(payload.get("kind", "dense")),
        )


def calibrate_thresholds(
    models: Mapping[str, NomModel],
    train: Union[Partition, ScadaSeries],
    mask: Optional[OperatingMask] = None,
    safety_factor: float = 1.2,
) -> ThresholdSet:
    """Maximum squared normalized residual per channel over the usable training rows."""

    if isinstance(train, Partition):
        series, mask = train.series, mask or train.mask
    else:
        series = train
    keep = np.ones(len(series), dtype=bool) if mask is None else ~mask.is_excluded()

    maxima: Dict[str, float] = {}
    kinds = set()
    for channel, model in models.items():
        kinds.add(model.kind)
        residuals = residual_series(model, series)[keep]
        residuals = residuals[np.isfinite(residuals)]
        if residuals.size == 0:
            raise CalibrationError(f"no evaluable training timestep for {channel!r}")
        peak = float(residuals.max())
        if peak <= 0.0:
            raise CalibrationError(f"all training residuals are zero for {channel!r}")
        maxima[channel] = peak
        LOGGER.info("[Calibrate] channel=%s D_ER=%.6g D=%.6g", channel, peak, safety_factor * peak)
    kind = kinds.pop() if len(kinds) == 1 else "mixed"
    return ThresholdSet(maxima, safety_factor, kind)


@dataclass(frozen=True, slots=True)
class DetectorConfig:
    missing_threshold: int = 10
    reheat_minutes: int = 60
    status: StatusMapping = StatusMapping()
    episode_gap_minutes: int = 60

    def __post_init__(self) -> None:
        if self.missing_threshold < 1:
            raise ConfigurationError("detector.missing_threshold must be >= 1")
        if self.reheat_minutes < 0 or self.episode_gap_minutes < 0:
            raise ConfigurationError("reheat_minutes and episode_gap_minutes must be >= 0")

    @property
    def episode_gap(self) -> pd.Timedelta:
        return pd.Timedelta(minutes=self.episode_gap_minutes)


@dataclass(slots=True, eq=False)
class AnomalyEvent:
    timestamp: pd.Timestamp
    channel: str
    kind: str
    residual: Optional[float] = None
    threshold: Optional[float] = None
    coincidence_probability: Optional[float] = None
    lead_minutes: Optional[float] = None
    diagnosis: Optional[Any] = None
    episode_start: Optional[pd.Timestamp] = None
    incident_start: Optional[pd.Timestamp] = None

    @property
    def opens_incident(self) -> bool:
        return self.incident_start is not None and self.incident_start == self.timestamp

    @property
    def opens_episode(self) -> bool:
        return self.episode_start is not None and self.episode_start == self.timestamp

    def to_dict(self) -> Dict[str, Any]:
        diagnosis = self.diagnosis.to_dict() if self.diagnosis is not None else None
        return {
            "timestamp": format_timestamps(pd.DatetimeIndex([self.timestamp]))[0],
            "channel": self.channel,
            "kind": self.kind,
            "residual": self.residual,
            "threshold": self.threshold,
            "coincidence_probability": self.coincidence_probability,
            "lead_minutes": self.lead_minutes,
            "diagnosis": diagnosis,
        }


def _frame_to_dict(frame: ScadaFrame) -> Dict[str, Any]:
    return {
        "timestamp": format_timestamps(pd.DatetimeIndex([frame.timestamp]))[0],
        "values": dict(frame.values),
        "status_code": frame.status_code,
        "operational_code": frame.operational_code,
    }


def _frame_from_dict(payload: Mapping[str, Any]) -> ScadaFrame:
    return ScadaFrame(
        timestamp=parse_timestamp(payload["timestamp"]),
        values=dict(payload["values"]),
        status_code=int(payload["status_code"]),
        operational_code=int(payload["operational_code"]),
    )


def _stamp(value: Optional[pd.Timestamp]) -> Optional[str]:
    return None if value is None else format_timestamps(pd.DatetimeIndex([value]))[0]


def _unstamp(value: Optional[str]) -> Optional[pd.Timestamp]:
    return None if value is None else parse_timestamp(value)


@dataclass(slots=True, eq=False)
class DetectorState:
    """Mutable per-turbine detector state, advanced by :func:`step` in timestamp order."""

    config: DetectorConfig
    channels: Tuple[str, ...]
    missing: Dict[str, int]
    outage_reported: Dict[str, bool]
    modes: Dict[str, str]
    last_timestamp: Optional[pd.Timestamp] = None
    was_down: bool = False
    restart_time: Optional[pd.Timestamp] = None
    settling: bool = False
    last_flag: Dict[str, pd.Timestamp] = field(default_factory=dict)
    episode_start: Dict[str, pd.Timestamp] = field(default_factory=dict)
    incident_last: Dict[str, pd.Timestamp] = field(default_factory=dict)
    incident_start: Dict[str, pd.Timestamp] = field(default_factory=dict)
    history: Deque[ScadaFrame] = field(default_factory=deque)
    history_length: int = 0

    @classmethod
    def initial(
        cls,
        channels: Sequence[str],
        config: DetectorConfig = DetectorConfig(),
        history_length: int = 0,
    ) -> "DetectorState":
        channels = tuple(channels)
        return cls(
            config=config,
            channels=channels,
            missing={channel: 0 for channel in channels},
            outage_reported={channel: False for channel in channels},
            modes={channel: MODE_NORMAL for channel in channels},
            history=deque(maxlen=history_length or None),
            history_length=history_length,
        )

    def _set_modes(self, mode: str) -> None:
        for channel in self.modes:
            self.modes[channel] = mode

    @property
    def mode(self) -> str:
        """Turbine-level mode: the most restrictive channel mode."""

        for mode in (MODE_DOWNTIME, MODE_REHEATING, MODE_EXTENDED):
            if mode in self.modes.values():
                return mode
        return MODE_EXTENDED if self.settling else MODE_NORMAL

    def to_dict(self) -> Dict[str, Any]:
        return {
            "channels": list(self.channels),
            "missing": dict(self.missing),
            "outage_reported": dict(self.outage_reported),
            "modes": dict(self.modes),
            "last_timestamp": _stamp(self.last_timestamp),
            "was_down": self.was_down,
            "restart_time": _stamp(self.restart_time),
            "settling": self.settling,
            "last_flag": {key: _stamp(value) for key, value in self.last_flag.items()},
            "episode_start": {key: _stamp(value) for key, value in self.episode_start.items()},
            "incident_last": {key: _stamp(value) for key, value in self.incident_last.items()},
            "incident_start": {key: _stamp(value) for key, value in self.incident_start.items()},
            "history": [_frame_to_dict(frame) for frame in self.history],
            "history_length": self.history_length,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any], config: DetectorConfig) -> "DetectorState":
        state = cls.initial(payload["channels"], config, int(payload.get("history_length", 0)))
        state.missing.update({k: int(v) for k, v in payload["missing"].items()})
        state.outage_reported.update({k: bool(v) for k, v in payload["outage_reported"].items()})
        state.modes.update(payload["modes"])
        state.last_timestamp = _unstamp(payload["last_timestamp"])
        state.was_down = bool(payload["was_down"])
        state.restart_time = _unstamp(payload["restart_time"])
        state.settling = bool(payload["settling"])
        for name in ("last_flag", "episode_start", "incident_last", "incident_start"):
            getattr(state, name).update(
                {key: _unstamp(value) for key, value in payload[name].items()}
            )
        for frame in payload["history"]:
            state.history.append(_frame_from_dict(frame))
        return state


def _frame_residual(
    model: NomModel, frame: ScadaFrame, history: Sequence[ScadaFrame]
) -> float:
    actual = frame.value(model.target_channel)
    if actual is None or not math.isfinite(actual):
        return math.nan
    if model.context_length > 1:
        if not history or frame.timestamp - history[-1].timestamp != MINUTE:
            return math.nan
        output = predict_normalized(model, history)
    else:
        output = predict_normalized(model, frame)
    if output is None:
        return math.nan
    target = model.normalization.normalize_channel(actual, model.target_channel)
    return (output - target) ** 2


def frame_residuals(
    state: DetectorState, frame: ScadaFrame, models: Mapping[str, NomModel]
) -> Dict[str, float]:
    return {
        channel: _frame_residual(model, frame, state.history) for channel, model in models.items()
    }


def _track(state: DetectorState, event: AnomalyEvent) -> None:
    gap = state.config.episode_gap
    episode_key = f"{event.kind}:{event.channel}"
    last = state.last_flag.get(episode_key)
    if last is None or event.timestamp - last > gap:
        state.episode_start[episode_key] = event.timestamp
    state.last_flag[episode_key] = event.timestamp
    event.episode_start = state.episode_start[episode_key]

    last_incident = state.incident_last.get(event.kind)
    if last_incident is None or event.timestamp - last_incident > gap:
        state.incident_start[event.kind] = event.timestamp
    state.incident_last[event.kind] = event.timestamp
    event.incident_start = state.incident_start[event.kind]


def step(
    state: DetectorState,
    frame: ScadaFrame,
    models: Mapping[str, NomModel],
    thresholds: ThresholdSet,
    residuals: Optional[Mapping[str, float]] = None,
) -> Tuple[DetectorState, List[AnomalyEvent]]:
    """Advances ``state`` (in place) by one frame and returns it with the frame's events.

    ``residuals`` may carry precomputed squared normalized residuals (NaN when the
    model is not evaluable); otherwise they are computed from the frame.
    """

    if state.last_timestamp is not None and frame.timestamp <= state.last_timestamp:
        raise StreamError(
            f"frame at {frame.timestamp} does not follow {state.last_timestamp}"
        )
    config = state.config
    events: List[AnomalyEvent] = []

    for channel in state.channels:
        value = frame.value(channel)
        if value is None or not math.isfinite(value):
            state.missing[channel] += 1
            outage = state.missing[channel] >= config.missing_threshold
            if outage and not state.outage_reported[channel]:
                state.outage_reported[channel] = True
                events.append(AnomalyEvent(frame.timestamp, channel, SENSOR_ANOMALY))
        else:
            state.missing[channel] = 0
            state.outage_reported[channel] = False

    if residuals is None:
        residuals = frame_residuals(state, frame, models)
    if state.history.maxlen:
        state.history.append(frame)

    down = config.status.frame_is_down(frame)
    if down:
        state.was_down = True
        state.restart_time = None
        state.settling = True
        state._set_modes(MODE_DOWNTIME)
    else:
        if state.was_down:
            state.restart_time = frame.timestamp
            state.was_down = False
        reheating = (
            state.restart_time is not None
            and frame.timestamp - state.restart_time < pd.Timedelta(minutes=config.reheat_minutes)
        )
        if reheating:
            state._set_modes(MODE_REHEATING)
        else:
            state.restart_time = None
            _classify(state, frame, residuals, thresholds, events)

    for event in events:
        if event.kind in ALERTABLE_KINDS:
            _track(state, event)
    state.last_timestamp = frame.timestamp
    return state, events


def _classify(
    state: DetectorState,
    frame: ScadaFrame,
    residuals: Mapping[str, float],
    thresholds: ThresholdSet,
    events: List[AnomalyEvent],
) -> None:
    evaluable = {
        channel: value
        for channel, value in residuals.items()
        if channel in thresholds.extended_reheating and math.isfinite(value)
    }
    if state.settling and evaluable and all(
        value < thresholds.settle(channel) for channel, value in evaluable.items()
    ):
        state.settling = False

    for channel in state.modes:
        state.modes[channel] = MODE_NORMAL
    for channel, value in evaluable.items():
        limit = thresholds.limit(channel)
        if value <= limit:
            continue
        kind = EXTENDED_REHEATING if state.settling else MEASUREMENT_ANOMALY
        if state.settling:
            state.modes[channel] = MODE_EXTENDED
        events.append(AnomalyEvent(frame.timestamp, channel, kind, value, limit))


# coincidence probability


def _qualifying_starts(fault_log: Iterable[FaultRecord], min_duration: pd.Timedelta) -> np.ndarray:
    starts = [fault.start.value for fault in fault_log if fault.duration >= min_duration]
    return np.sort(np.array(starts, dtype=np.int64))


def lead_time(
    anomaly_time: pd.Timestamp,
    fault_log: Sequence[FaultRecord],
    min_duration: pd.Timedelta = pd.Timedelta(0),
) -> Optional[Tuple[pd.Timedelta, FaultRecord]]:
    """Time to the first fault of at least ``min_duration`` starting strictly after the anomaly."""

    candidates = [
        fault
        for fault in fault_log
        if fault.start > anomaly_time and fault.duration >= min_duration
    ]
    if not candidates:
        return None
    fault = min(candidates, key=lambda record: record.start)
    return fault.start - anomaly_time, fault


def coincidence_probability(
    anomaly_time: pd.Timestamp,
    fault_log: Sequence[FaultRecord],
    delta: Optional[pd.Timedelta],
    min_duration: pd.Timedelta,
    eligible_timestamps: Union[pd.DatetimeIndex, Sequence[pd.Timestamp]],
) -> float:
    """Share of eligible timesteps whose next fault of duration >= d starts within ``delta``.

    With ``delta=None`` the lead time from ``anomaly_time`` to its next such fault is used.
    """

    eligible = pd.DatetimeIndex(eligible_timestamps)
    if len(eligible) == 0:
        raise ProbabilityError("no eligible timesteps")
    if delta is None:
        lead = lead_time(anomaly_time, fault_log, min_duration)
        if lead is None:
            raise ProbabilityError(f"no fault of duration >= {min_duration} after {anomaly_time}")
        delta = lead[0]
    starts = _qualifying_starts(fault_log, min_duration)
    if starts.size == 0:
        return 0.0
    stamps = eligible.asi8
    following = np.searchsorted(starts, stamps, side="right")
    has_next = following < starts.size
    gaps = starts[np.minimum(following, starts.size - 1)] - stamps
    hits = has_next & (gaps <= pd.Timedelta(delta).value)
    return float(hits.sum()) / len(stamps)


# episodes and replay


@dataclass(slots=True)
class Episode:
    channel: str
    kind: str
    start: pd.Timestamp
    end: pd.Timestamp
    count: int
    peak_residual: Optional[float] = None
    first_event: Optional[AnomalyEvent] = None

    def to_dict(self) -> Dict[str, Any]:
        first = self.first_event
        return {
            "channel": self.channel,
            "kind": self.kind,
            "start": _stamp(self.start),
            "end": _stamp(self.end),
            "events": self.count,
            "peak_residual": self.peak_residual,
            "lead_minutes": first.lead_minutes if first else None,
            "coincidence_probability": first.coincidence_probability if first else None,
        }


def merge_episodes(events: Iterable[AnomalyEvent], gap: pd.Timedelta) -> List[Episode]:
    """Groups events per channel and kind; a new episode starts after more than ``gap``."""

    open_episodes: Dict[Tuple[str, str], Episode] = {}
    episodes: List[Episode] = []
    for event in sorted(events, key=lambda item: item.timestamp):
        key = (event.kind, event.channel)
        current = open_episodes.get(key)
        if current is None or event.timestamp - current.end > gap:
            current = Episode(
                event.channel, event.kind, event.timestamp, event.timestamp, 0, first_event=event
            )
            open_episodes[key] = current
            episodes.append(current)
        current.end = event.timestamp
        current.count += 1
        if event.residual is not None:
            peak = current.peak_residual
            current.peak_residual = event.residual if peak is None else max(peak, event.residual)
    return episodes


def incident_key(kind: str, start: pd.Timestamp) -> str:
    """Alert dedup key shared by batch replay and the streaming tracker."""

    return f"{kind}@{_stamp(start)}"


@dataclass(slots=True)
class Incident:
    kind: str
    start: pd.Timestamp
    end: pd.Timestamp
    episodes: List[Episode] = field(default_factory=list)

    @property
    def key(self) -> str:
        return incident_key(self.kind, self.start)

    @property
    def first_episode(self) -> Episode:
        return min(self.episodes, key=lambda episode: episode.start)

    def first_triggers(self) -> List[Dict[str, Any]]:
        ordered = sorted(self.episodes, key=lambda episode: (episode.start, episode.channel))
        seen: Dict[str, pd.Timestamp] = {}
        for episode in ordered:
            seen.setdefault(episode.channel, episode.start)
        return [
            {
                "channel": channel,
                "timestamp": _stamp(stamp),
                "minutes_after_first": (stamp - self.start) / MINUTE,
            }
            for channel, stamp in seen.items()
        ]


def group_incidents(events: Iterable[AnomalyEvent], gap: pd.Timedelta) -> List[Incident]:
    """Groups alertable events of one kind across channels, matching the streaming tracker."""

    incidents: List[Incident] = []
    current: Dict[str, Incident] = {}
    ordered = sorted(
        (event for event in events if event.kind in ALERTABLE_KINDS),
        key=lambda item: item.timestamp,
    )
    for event in ordered:
        incident = current.get(event.kind)
        if incident is None or event.timestamp - incident.end > gap:
            incident = Incident(event.kind, event.timestamp, event.timestamp)
            current[event.kind] = incident
            incidents.append(incident)
        incident.end = event.timestamp
    episodes = merge_episodes(ordered, gap)
    for episode in episodes:
        for incident in incidents:
            if incident.kind == episode.kind and incident.start <= episode.start <= incident.end:
                incident.episodes.append(episode)
                break
    return incidents


@dataclass(slots=True)
class ReplayResult:
    events: List[AnomalyEvent]
    summary: Dict[str, Any]
    residuals: Dict[str, np.ndarray]
    state: DetectorState
    incidents: List[Incident] = field(default_factory=list)
    mask: Optional[OperatingMask] = None


def annotate_events(
    events: Sequence[AnomalyEvent],
    fault_log: Sequence[FaultRecord],
    eligible: Mapping[str, pd.DatetimeIndex],
) -> None:
    """Adds lead time to the next fault and p(lead, d) to measurement anomalies."""

    for event in events:
        if event.kind != MEASUREMENT_ANOMALY:
            continue
        lead = lead_time(event.timestamp, fault_log)
        if lead is None:
            continue
        delta, fault = lead
        event.lead_minutes = delta / MINUTE
        stamps = eligible.get(event.channel)
        if stamps is None or len(stamps) == 0:
            continue
        event.coincidence_probability = coincidence_probability(
            event.timestamp, fault_log, delta, fault.duration, stamps
        )


def replay(
    series: ScadaSeries,
    models: Mapping[str, NomModel],
    thresholds: ThresholdSet,
    mask: OperatingMask,
    config: DetectorConfig = DetectorConfig(),
    state: Optional[DetectorState] = None,
) -> ReplayResult:
    """Folds :func:`step` over ``series`` with batch-computed residuals and builds the summary."""

    residuals = {channel: residual_series(model, series) for channel, model in models.items()}
    history = max((model.context_length for model in models.values()), default=1)
    state = state or DetectorState.initial(
        series.channel_ids, config, history if history > 1 else 0
    )
    channels = list(residuals)
    matrix = (
        np.column_stack([residuals[c] for c in channels])
        if channels
        else np.empty((len(series), 0))
    )

    events: List[AnomalyEvent] = []
    settling = np.zeros(len(series), dtype=bool)
    for index, frame in enumerate(series):
        row = {channel: float(matrix[index, pos]) for pos, channel in enumerate(channels)}
        _, produced = step(state, frame, models, thresholds, row)
        events.extend(produced)
        settling[index] = state.mode == MODE_EXTENDED

    fault_log = mask.fault_log()
    normal = mask.is_label(MaskLabel.NORMAL)
    eligible = {
        channel: series.timestamps[normal & np.isfinite(values)]
        for channel, values in residuals.items()
    }
    annotate_events(events, fault_log, eligible)
    incidents = group_incidents(events, config.episode_gap)
    realized = mask.relabel(settling & normal, MaskLabel.EXTENDED_REHEATING)
    summary = build_summary(events, incidents, fault_log, eligible, realized, thresholds)
    LOGGER.info(
        "[Replay] frames=%s events=%s incidents=%s", len(series), len(events), len(incidents)
    )
    return ReplayResult(events, summary, residuals, state, incidents, realized)


def build_summary(
    events: Sequence[AnomalyEvent],
    incidents: Sequence[Incident],
    fault_log: Sequence[FaultRecord],
    eligible: Mapping[str, pd.DatetimeIndex],
    mask: OperatingMask,
    thresholds: ThresholdSet,
) -> Dict[str, Any]:
    counts = {kind: sum(1 for event in events if event.kind == kind) for kind in EVENT_KINDS}
    first_triggers: Dict[str, Optional[str]] = {}
    for event in events:
        if event.kind == MEASUREMENT_ANOMALY and event.channel not in first_triggers:
            first_triggers[event.channel] = _stamp(event.timestamp)

    incident_rows = []
    for incident in incidents:
        first = incident.first_episode
        lead = lead_time(first.start, fault_log)
        row: Dict[str, Any] = {
            "key": incident.key,
            "kind": incident.kind,
            "start": _stamp(incident.start),
            "end": _stamp(incident.end),
            "channel": first.channel,
            "first_triggers": incident.first_triggers(),
            "episodes": [episode.to_dict() for episode in incident.episodes],
            "lead_minutes": None,
            "fault_duration_minutes": None,
            "coincidence_probability": None,
            "eligible_timesteps": len(eligible.get(first.channel, ())),
        }
        if lead is not None and incident.kind == MEASUREMENT_ANOMALY:
            delta, fault = lead
            row["lead_minutes"] = delta / MINUTE
            row["fault_duration_minutes"] = fault.duration / MINUTE
            if row["eligible_timesteps"]:
                row["coincidence_probability"] = coincidence_probability(
                    first.start, fault_log, delta, fault.duration, eligible[first.channel]
                )
        incident_rows.append(row)

    return {
        "event_counts": counts,
        "first_triggers": first_triggers,
        "incidents": incident_rows,
        "faults": [
            {"start": _stamp(fault.start), "duration_minutes": fault.duration / MINUTE}
            for fault in fault_log
        ],
        "mask_counts": mask.counts(),
        "thresholds": thresholds.to_dict(),
    }
