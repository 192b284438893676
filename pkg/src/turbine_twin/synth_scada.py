"""Seeded synthetic SCADA generator with first-order thermal dynamics and injected events.

Wind and ambient temperature are mean-reverting AR(1) processes sampled once a
minute. Wind is held between calm and cut-out, and the ambient excursion and
sensor noise are clipped to a few standard deviations. Rotor speed follows a
clipped power-curve fraction of rated speed. Each endogenous temperature
relaxes towards ``gain * rpm + coupling * ambient`` with its own time constant,
so stops cool the components and restarts reheat them.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ScenarioError
from .scada_ingest import (
    DEFAULT_SCHEMA,
    MINUTE,
    TIMESTAMP_COLUMN,
    ChannelSpec,
    ScadaSeries,
    format_timestamps,
    parse_timestamp,
)

LOGGER = logging.getLogger(__name__)

THERMAL_DRIFT = "thermal-drift"
SENSOR_DROPOUT = "sensor-dropout"
FAULT = "fault"
PLANNED_STOP = "planned-stop"
EVENT_KINDS = (THERMAL_DRIFT, SENSOR_DROPOUT, FAULT)

STATUS_OPERATING = 0
STATUS_FAULT = 1
STATUS_PLANNED_STOP = 2
OPERATIONAL_IDLE = 3

AMBIENT_CHANNEL = "ambient_temp"
RPM_CHANNEL = "rotor_rpm"
MINUTES_PER_DAY = 1440


@dataclass(frozen=True, slots=True)
class WindProcess:
    mean: float = 9.0
    std: float = 3.0
    correlation_minutes: float = 360.0
    cut_in: float = 3.0
    rated_speed: float = 12.0
    cut_out: float = 25.0


@dataclass(frozen=True, slots=True)
class AmbientProcess:
    mean: float = 8.0
    daily_amplitude: float = 3.0
    std: float = 1.0
    correlation_minutes: float = 720.0
    clip_std: float = 2.0


@dataclass(frozen=True, slots=True)
class ThermalCoefficients:
    gain: float
    coupling: float
    time_constant_minutes: float
    noise_std: float = 0.2

    def steady_state(self, rpm: float, ambient: float) -> float:
        return self.gain * rpm + self.coupling * ambient


DEFAULT_THERMAL: Dict[str, ThermalCoefficients] = {
    "gearbox_oil_temp": ThermalCoefficients(2.2, 1.0, 90.0),
    "shaft_bearing_temp": ThermalCoefficients(1.6, 1.0, 60.0),
    "generator_rotor_temp": ThermalCoefficients(2.0, 1.0, 40.0),
    "generator_stator_temp": ThermalCoefficients(2.5, 1.0, 45.0),
    "shaft_brake_1_temp": ThermalCoefficients(1.2, 1.0, 25.0, 0.15),
    "shaft_brake_2_temp": ThermalCoefficients(1.25, 1.0, 25.0, 0.15),
}
DEFAULT_THERMAL_DICT = {key: asdict(value) for key, value in DEFAULT_THERMAL.items()}


@dataclass(frozen=True, slots=True)
class PlannedStop:
    start_minute: int
    duration_minutes: int


@dataclass(frozen=True, slots=True)
class InjectedEvent:
    """An injected drift, dropout or fault, placed in minutes from the scenario start.

    A thermal drift with ``linked_fault`` set must end exactly where that fault
    starts, ``lead_minutes`` after its own start.
    """

    id: str
    kind: str
    start_minute: int
    duration_minutes: int
    channel: Optional[str] = None
    ramp_per_hour: float = 0.0
    linked_fault: Optional[str] = None
    lead_minutes: Optional[int] = None

    @property
    def end_minute(self) -> int:
        return self.start_minute + self.duration_minutes


@dataclass(frozen=True, slots=True)
class ScenarioSpec:
    name: str
    seed: int = 7
    duration_days: float = 90.0
    start: str = "2021-01-01T00:00:00Z"
    channels: Tuple[ChannelSpec, ...] = DEFAULT_SCHEMA
    wind: WindProcess = WindProcess()
    ambient: AmbientProcess = AmbientProcess()
    rated_rpm: float = 16.0
    idle_fraction: float = 0.3
    rpm_noise_std: float = 0.05
    noise_clip: float = 3.0
    thermal: Mapping[str, ThermalCoefficients] = field(
        default_factory=lambda: dict(DEFAULT_THERMAL)
    )
    planned_stops: Tuple[PlannedStop, ...] = ()
    events: Tuple[InjectedEvent, ...] = ()

    @property
    def minutes(self) -> int:
        return int(round(self.duration_days * MINUTES_PER_DAY))

    @property
    def start_timestamp(self) -> pd.Timestamp:
        return parse_timestamp(self.start)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "duration_days": self.duration_days,
            "start": self.start,
            "channels": [asdict(channel) for channel in self.channels],
            "wind": asdict(self.wind),
            "ambient": asdict(self.ambient),
            "rated_rpm": self.rated_rpm,
            "idle_fraction": self.idle_fraction,
            "rpm_noise_std": self.rpm_noise_std,
            "noise_clip": self.noise_clip,
            "thermal": {key: asdict(value) for key, value in self.thermal.items()},
            "planned_stops": [asdict(stop) for stop in self.planned_stops],
            "events": [asdict(event) for event in self.events],
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ScenarioSpec":
        try:
            return cls(
                name=str(payload["name"]),
                seed=int(payload.get("seed", 7)),
                duration_days=float(payload.get("duration_days", 90.0)),
                start=str(payload.get("start", "2021-01-01T00:00:00Z")),
                channels=tuple(
                    ChannelSpec(**item) for item in payload.get("channels", ())
                )
                or DEFAULT_SCHEMA,
                wind=WindProcess(**payload.get("wind", {})),
                ambient=AmbientProcess(**payload.get("ambient", {})),
                rated_rpm=float(payload.get("rated_rpm", 16.0)),
                idle_fraction=float(payload.get("idle_fraction", 0.3)),
                rpm_noise_std=float(payload.get("rpm_noise_std", 0.05)),
                noise_clip=float(payload.get("noise_clip", 3.0)),
                thermal={
                    key: ThermalCoefficients(**value)
                    for key, value in payload.get("thermal", DEFAULT_THERMAL_DICT).items()
                },
                planned_stops=tuple(
                    PlannedStop(**item) for item in payload.get("planned_stops", ())
                ),
                events=tuple(InjectedEvent(**item) for item in payload.get("events", ())),
            )
        except TypeError as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from exc


def validate_scenario(spec: ScenarioSpec) -> None:
    total = spec.minutes
    if total <= 0:
        raise ScenarioError("duration_days must be positive")
    ids = {channel.id for channel in spec.channels}
    for required in (AMBIENT_CHANNEL, RPM_CHANNEL):
        if required not in ids:
            raise ScenarioError(f"scenario schema lacks the {required!r} channel")
    for channel in spec.channels:
        if channel.is_endogenous and channel.id not in spec.thermal:
            raise ScenarioError(f"no thermal coefficients for {channel.id!r}")
    for name, coefficients in spec.thermal.items():
        if coefficients.time_constant_minutes <= 0:
            raise ScenarioError(f"time constant of {name!r} must be positive")
        if coefficients.noise_std < 0:
            raise ScenarioError(f"noise_std of {name!r} must be non-negative")
    if spec.wind.correlation_minutes <= 0 or spec.ambient.correlation_minutes <= 0:
        raise ScenarioError("correlation times must be positive")
    if not 0 <= spec.wind.cut_in < spec.wind.rated_speed <= spec.wind.cut_out:
        raise ScenarioError("wind speeds must satisfy 0 <= cut_in < rated_speed <= cut_out")
    if spec.ambient.clip_std <= 0 or spec.noise_clip <= 0:
        raise ScenarioError("clip widths must be positive")

    events = {event.id: event for event in spec.events}
    if len(events) != len(spec.events):
        raise ScenarioError("injected event ids must be unique")
    for event in spec.events:
        if event.kind not in EVENT_KINDS:
            raise ScenarioError(f"event {event.id!r}: unknown kind {event.kind!r}")
        if event.start_minute < 0 or event.duration_minutes <= 0 or event.end_minute > total:
            raise ScenarioError(f"event {event.id!r} does not lie within the scenario")
        if event.kind in (THERMAL_DRIFT, SENSOR_DROPOUT) and event.channel not in ids:
            raise ScenarioError(f"event {event.id!r}: unknown channel {event.channel!r}")
        if event.linked_fault is not None:
            fault = events.get(event.linked_fault)
            if fault is None or fault.kind != FAULT:
                raise ScenarioError(
                    f"event {event.id!r} links to unknown fault {event.linked_fault!r}"
                )
            lead = event.lead_minutes if event.lead_minutes is not None else event.duration_minutes
            if event.start_minute + lead != fault.start_minute:
                raise ScenarioError(
                    f"event {event.id!r} must precede fault {fault.id!r} by {lead} minutes"
                )

    downtimes = [
        (stop.start_minute, stop.start_minute + stop.duration_minutes, "planned stop")
        for stop in spec.planned_stops
    ]
    downtimes += [(e.start_minute, e.end_minute, e.id) for e in spec.events if e.kind == FAULT]
    downtimes.sort()
    for start, end, label in downtimes:
        if start < 0 or end > total or end <= start:
            raise ScenarioError(f"downtime {label!r} does not lie within the scenario")
    for (_, first_end, first), (second_start, _, second) in zip(downtimes, downtimes[1:]):
        if second_start < first_end:
            raise ScenarioError(f"downtimes {first!r} and {second!r} overlap")


def _ar1(noise: np.ndarray, mean: float, std: float, correlation_minutes: float) -> np.ndarray:
    decay = math.exp(-1.0 / correlation_minutes)
    innovation = std * math.sqrt(1.0 - decay**2)
    out = np.empty(len(noise))
    level = mean
    for index, draw in enumerate(noise):
        level = mean + (level - mean) * decay + innovation * draw
        out[index] = level
    return out


def wind_speed(wind: WindProcess, noise: np.ndarray) -> np.ndarray:
    """Hub wind speed in m/s, held between calm and cut-out."""

    level = _ar1(noise, wind.mean, wind.std, wind.correlation_minutes)
    return np.clip(level, 0.0, wind.cut_out)


def ambient_temperature(
    ambient: AmbientProcess, minute_of_day: np.ndarray, noise: np.ndarray
) -> np.ndarray:
    """Daily cycle peaking mid-afternoon plus a bounded AR(1) excursion."""

    bound = ambient.clip_std * ambient.std
    excursion = np.clip(
        _ar1(noise, 0.0, ambient.std, ambient.correlation_minutes), -bound, bound
    )
    cycle = np.cos(2.0 * math.pi * (minute_of_day - 240) / MINUTES_PER_DAY)
    return ambient.mean - ambient.daily_amplitude * cycle + excursion


def _relax(
    steady: np.ndarray, time_constants: np.ndarray, initial: np.ndarray
) -> np.ndarray:
    """Exact first-order response with the input held over each one-minute step."""

    decay = np.exp(-1.0 / time_constants)
    out = np.empty_like(steady)
    state = initial.astype(np.float64).copy()
    out[0] = state
    for index in range(1, len(steady)):
        target = steady[index - 1]
        state = target + (state - target) * decay
        out[index] = state
    return out


@dataclass(slots=True, eq=False)
class GroundTruth:
    timestamps: pd.DatetimeIndex
    labels: List[str]
    events: Tuple[InjectedEvent, ...]
    start: pd.Timestamp

    def event_start(self, event_id: str) -> pd.Timestamp:
        for event in self.events:
            if event.id == event_id:
                return self.start + event.start_minute * MINUTE
        raise KeyError(event_id)

    def linked_pairs(self) -> List[Tuple[str, str]]:
        return [(event.id, event.linked_fault) for event in self.events if event.linked_fault]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {TIMESTAMP_COLUMN: format_timestamps(self.timestamps), "events": self.labels}
        )


def generate(spec: ScenarioSpec) -> Tuple[ScadaSeries, GroundTruth]:
    validate_scenario(spec)
    total = spec.minutes
    rng = np.random.default_rng(spec.seed)
    channels = spec.channels
    ids = [channel.id for channel in channels]
    endogenous = [channel.id for channel in channels if channel.is_endogenous]

    wind_noise = rng.standard_normal(total)
    ambient_noise = rng.standard_normal(total)
    sensor_noise = rng.standard_normal((total, len(endogenous)))
    rpm_noise = rng.standard_normal(total)

    timestamps = pd.date_range(spec.start_timestamp, periods=total, freq="min")
    minute_of_day = np.arange(total) % MINUTES_PER_DAY
    air = ambient_temperature(spec.ambient, minute_of_day, ambient_noise)
    wind = wind_speed(spec.wind, wind_noise)
    fraction = np.clip(
        (wind - spec.wind.cut_in) / (spec.wind.rated_speed - spec.wind.cut_in), 0.0, 1.0
    )
    rpm = spec.rated_rpm * np.maximum(spec.idle_fraction, fraction)
    idle = fraction <= spec.idle_fraction

    status = np.full(total, STATUS_OPERATING, dtype=np.int64)
    for stop in spec.planned_stops:
        status[stop.start_minute : stop.start_minute + stop.duration_minutes] = STATUS_PLANNED_STOP
    for event in spec.events:
        if event.kind == FAULT:
            status[event.start_minute : event.end_minute] = STATUS_FAULT
    rpm[status != STATUS_OPERATING] = 0.0

    coefficients = [spec.thermal[name] for name in endogenous]
    gains = np.array([c.gain for c in coefficients])
    couplings = np.array([c.coupling for c in coefficients])
    steady = rpm[:, None] * gains[None, :] + air[:, None] * couplings[None, :]
    taus = np.array([c.time_constant_minutes for c in coefficients])
    temperatures = _relax(steady, taus, steady[0])
    noise = np.clip(sensor_noise, -spec.noise_clip, spec.noise_clip)
    measured = temperatures + noise * np.array([c.noise_std for c in coefficients])

    values = np.empty((total, len(ids)))
    for index, channel in enumerate(ids):
        if channel == AMBIENT_CHANNEL:
            values[:, index] = air
        elif channel == RPM_CHANNEL:
            values[:, index] = np.where(rpm > 0, rpm + spec.rpm_noise_std * rpm_noise, 0.0)
        else:
            values[:, index] = measured[:, endogenous.index(channel)]

    labels: List[List[str]] = [[] for _ in range(total)]
    for stop_index, stop in enumerate(spec.planned_stops):
        for minute in range(stop.start_minute, stop.start_minute + stop.duration_minutes):
            labels[minute].append(f"{PLANNED_STOP}-{stop_index}")
    for event in spec.events:
        window = slice(event.start_minute, event.end_minute)
        if event.kind == THERMAL_DRIFT:
            column = ids.index(event.channel)  # type: ignore[arg-type]
            elapsed = np.arange(event.duration_minutes, dtype=np.float64)
            values[window, column] += event.ramp_per_hour * elapsed / 60.0
        elif event.kind == SENSOR_DROPOUT:
            values[window, ids.index(event.channel)] = np.nan  # type: ignore[arg-type]
        for minute in range(event.start_minute, event.end_minute):
            labels[minute].append(event.id)

    operational = status.copy()
    operational[(status == STATUS_OPERATING) & idle] = OPERATIONAL_IDLE
    series = ScadaSeries(
        channels=tuple(channels),
        timestamps=timestamps,
        values=values,
        status_code=status,
        operational_code=operational,
    )
    truth = GroundTruth(
        timestamps, [";".join(items) for items in labels], spec.events, spec.start_timestamp
    )
    LOGGER.info(
        "[Synth] scenario=%s minutes=%s events=%s stops=%s",
        spec.name,
        total,
        len(spec.events),
        len(spec.planned_stops),
    )
    return series, truth


def write_ground_truth(truth: GroundTruth, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    truth.to_frame().to_csv(path, index=False)
    return path


def emit_raw_samples(series: ScadaSeries, rate_hz: float = 0.3, spread: float = 0.5) -> ScadaSeries:
    """Sub-minute samples whose per-minute mean equals the minute value.

    Offsets are symmetric around zero; missing minute values stay missing.
    """

    per_minute = max(1, int(round(rate_hz * 60)))
    offsets = pd.to_timedelta(np.arange(per_minute) / rate_hz, unit="s")
    jitter = spread * np.linspace(-1.0, 1.0, per_minute) if per_minute > 1 else np.zeros(1)
    repeat = np.repeat(np.arange(len(series)), per_minute)
    stamps = series.timestamps[repeat] + np.tile(offsets, len(series))
    values = series.values[repeat] + np.tile(jitter, len(series))[:, None]
    return ScadaSeries(
        channels=series.channels,
        timestamps=pd.DatetimeIndex(stamps),
        values=values,
        status_code=series.status_code[repeat],
        operational_code=series.operational_code[repeat],
    )


def _drift_before_long_fault() -> ScenarioSpec:
    drift_lead = 468
    fault_start = 70 * MINUTES_PER_DAY + 9 * 60
    stops = (
        PlannedStop(9 * MINUTES_PER_DAY + 10 * 60, 180),
        PlannedStop(23 * MINUTES_PER_DAY + 8 * 60, 300),
        PlannedStop(38 * MINUTES_PER_DAY + 13 * 60, 120),
        PlannedStop(50 * MINUTES_PER_DAY + 7 * 60, 360),
        PlannedStop(84 * MINUTES_PER_DAY + 11 * 60, 240),
    )
    events = (
        InjectedEvent(
            id="rotor-drift",
            kind=THERMAL_DRIFT,
            start_minute=fault_start - drift_lead,
            duration_minutes=drift_lead,
            channel="generator_rotor_temp",
            ramp_per_hour=2.0,
            linked_fault="generator-fault",
            lead_minutes=drift_lead,
        ),
        InjectedEvent(
            id="generator-fault",
            kind=FAULT,
            start_minute=fault_start,
            duration_minutes=int(round(4.2 * MINUTES_PER_DAY)),
        ),
    )
    return ScenarioSpec(
        name="paper-analogue", seed=11, duration_days=90.0, planned_stops=stops, events=events
    )


def _sensor_outage() -> ScenarioSpec:
    return ScenarioSpec(
        name="sensor-outage",
        seed=23,
        duration_days=30.0,
        events=(
            InjectedEvent(
                id="stator-dropout",
                kind=SENSOR_DROPOUT,
                start_minute=25 * MINUTES_PER_DAY,
                duration_minutes=45,
                channel="generator_stator_temp",
            ),
        ),
    )


def _short_stops() -> ScenarioSpec:
    events = tuple(
        InjectedEvent(
            id=f"short-fault-{index}",
            kind=FAULT,
            start_minute=(3 + 4 * index) * MINUTES_PER_DAY + 600 + 37 * index,
            duration_minutes=10 + 4 * index,
        )
        for index in range(6)
    )
    return ScenarioSpec(name="short-stops", seed=31, duration_days=30.0, events=events)


SCENARIOS: Dict[str, Callable[[], ScenarioSpec]] = {
    "clean-year": lambda: ScenarioSpec(name="clean-year", seed=3, duration_days=365.0),
    "paper-analogue": _drift_before_long_fault,
    "sensor-outage": _sensor_outage,
    "short-stops": _short_stops,
}


def scenario_library() -> Dict[str, ScenarioSpec]:
    return {name: build() for name, build in SCENARIOS.items()}


def get_scenario(name: str) -> ScenarioSpec:
    try:
        return SCENARIOS[name]()
    except KeyError as exc:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from exc


def shortened(spec: ScenarioSpec, duration_days: float) -> ScenarioSpec:
    """Copy of ``spec`` cut to ``duration_days``, dropping stops and events past the end."""

    limit = int(round(duration_days * MINUTES_PER_DAY))
    kept = {event.id for event in spec.events if event.end_minute <= limit}
    events = tuple(
        event
        for event in spec.events
        if event.id in kept and (event.linked_fault is None or event.linked_fault in kept)
    )
    stops = tuple(
        stop for stop in spec.planned_stops if stop.start_minute + stop.duration_minutes <= limit
    )
    return replace(spec, duration_days=duration_days, planned_stops=stops, events=events)


def load_scenario(path: Path) -> ScenarioSpec:
    try:
        return ScenarioSpec.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid scenario JSON") from exc


def scenario_names() -> Sequence[str]:
    return sorted(SCENARIOS)
