from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import (
    ConfigurationError,
    DataError,
    DegenerateChannelError,
    InsufficientDataError,
    SchemaError,
    StreamError,
)

LOGGER = logging.getLogger(__name__)

TIMESTAMP_COLUMN = "timestamp"
STATUS_COLUMN = "status_code"
OPERATIONAL_COLUMN = "operational_code"
MINUTE = pd.Timedelta(minutes=1)

ENDOGENOUS = "endogenous"
EXOGENOUS = "exogenous"

_SIGNAL_TYPES = {
    "°C": "temperature",
    "degC": "temperature",
    "C": "temperature",
    "RPM": "rotational-speed",
    "rpm": "rotational-speed",
}


@dataclass(frozen=True, slots=True)
class ChannelSpec:
    id: str
    role: str
    unit: str
    component_tag: str
    component: str = ""
    signal_type: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise SchemaError("channel id must be non-empty")
        if self.role not in (ENDOGENOUS, EXOGENOUS):
            raise SchemaError(f"channel {self.id!r}: unknown role {self.role!r}")
        if not self.component:
            object.__setattr__(self, "component", self.component_tag.split("-", 1)[0])
        if not self.signal_type:
            object.__setattr__(self, "signal_type", _SIGNAL_TYPES.get(self.unit, "measurement"))

    @property
    def is_endogenous(self) -> bool:
        return self.role == ENDOGENOUS


DEFAULT_SCHEMA: Tuple[ChannelSpec, ...] = (
    ChannelSpec("gearbox_oil_temp", ENDOGENOUS, "°C", "gearbox-oil"),
    ChannelSpec("shaft_bearing_temp", ENDOGENOUS, "°C", "shaft-bearing"),
    ChannelSpec("generator_rotor_temp", ENDOGENOUS, "°C", "generator-rotor"),
    ChannelSpec("generator_stator_temp", ENDOGENOUS, "°C", "generator-stator"),
    ChannelSpec("shaft_brake_1_temp", ENDOGENOUS, "°C", "shaft-brake"),
    ChannelSpec("shaft_brake_2_temp", ENDOGENOUS, "°C", "shaft-brake"),
    ChannelSpec("ambient_temp", EXOGENOUS, "°C", "environment-air"),
    ChannelSpec("rotor_rpm", EXOGENOUS, "RPM", "rotor-hub"),
)


def validate_schema(schema: Sequence[ChannelSpec]) -> Tuple[ChannelSpec, ...]:
    channels = tuple(schema)
    seen: set[str] = set()
    for channel in channels:
        if channel.id in seen:
            raise SchemaError(f"duplicate channel id {channel.id!r}")
        if channel.id in (TIMESTAMP_COLUMN, STATUS_COLUMN, OPERATIONAL_COLUMN):
            raise SchemaError(f"channel id {channel.id!r} collides with a reserved column")
        seen.add(channel.id)
    if not any(channel.role == EXOGENOUS for channel in channels):
        raise SchemaError("schema must contain at least one exogenous channel")
    if not any(channel.role == ENDOGENOUS for channel in channels):
        raise SchemaError("schema must contain at least one endogenous channel")
    return channels


def endogenous_ids(schema: Sequence[ChannelSpec]) -> List[str]:
    return [channel.id for channel in schema if channel.is_endogenous]


@dataclass(frozen=True, slots=True)
class ScadaFrame:
    timestamp: pd.Timestamp
    values: Mapping[str, Optional[float]]
    status_code: int = 0
    operational_code: int = 0

    def value(self, channel: str) -> Optional[float]:
        return self.values.get(channel)


@dataclass(frozen=True, slots=True, eq=False)
class ScadaSeries:
    """Column-oriented series of frames; NaN marks a missing value."""

    channels: Tuple[ChannelSpec, ...]
    timestamps: pd.DatetimeIndex
    values: np.ndarray
    status_code: np.ndarray
    operational_code: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.timestamps)
        if self.values.shape != (n, len(self.channels)):
            raise DataError(
                f"values shape {self.values.shape} does not match {n} rows x "
                f"{len(self.channels)} channels"
            )
        if len(self.status_code) != n or len(self.operational_code) != n:
            raise DataError("status/operational codes must have one entry per row")

    @classmethod
    def empty(cls, channels: Sequence[ChannelSpec]) -> "ScadaSeries":
        return cls(
            channels=tuple(channels),
            timestamps=pd.DatetimeIndex([], tz="UTC"),
            values=np.empty((0, len(channels))),
            status_code=np.empty(0, dtype=np.int64),
            operational_code=np.empty(0, dtype=np.int64),
        )

    @classmethod
    def from_frames(
        cls, channels: Sequence[ChannelSpec], frames: Sequence[ScadaFrame]
    ) -> "ScadaSeries":
        channels = tuple(channels)
        if not frames:
            return cls.empty(channels)
        values = np.array(
            [
                [_as_float(frame.values.get(channel.id)) for channel in channels]
                for frame in frames
            ],
            dtype=np.float64,
        )
        return cls(
            channels=channels,
            timestamps=pd.DatetimeIndex([pd.Timestamp(f.timestamp) for f in frames]).tz_convert(
                "UTC"
            ),
            values=values,
            status_code=np.array([f.status_code for f in frames], dtype=np.int64),
            operational_code=np.array([f.operational_code for f in frames], dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    def __iter__(self) -> Iterator[ScadaFrame]:
        for index in range(len(self)):
            yield self.frame(index)

    @property
    def channel_ids(self) -> List[str]:
        return [channel.id for channel in self.channels]

    def index_of(self, channel: str) -> int:
        try:
            return self.channel_ids.index(channel)
        except ValueError as exc:
            raise SchemaError(f"unknown channel {channel!r}") from exc

    def column(self, channel: str) -> np.ndarray:
        return self.values[:, self.index_of(channel)]

    def take(self, selector: Union[slice, np.ndarray]) -> "ScadaSeries":
        return ScadaSeries(
            channels=self.channels,
            timestamps=self.timestamps[selector],
            values=self.values[selector],
            status_code=self.status_code[selector],
            operational_code=self.operational_code[selector],
        )

    def frame(self, index: int) -> ScadaFrame:
        row = self.values[index]
        return ScadaFrame(
            timestamp=self.timestamps[index],
            values={
                channel.id: (None if math.isnan(value) else float(value))
                for channel, value in zip(self.channels, row)
            },
            status_code=int(self.status_code[index]),
            operational_code=int(self.operational_code[index]),
        )

    def minute_steps(self) -> np.ndarray:
        """True at i when row i follows row i-1 by exactly one minute."""

        steps = np.zeros(len(self), dtype=bool)
        if len(self) > 1:
            steps[1:] = np.diff(self.timestamps.asi8) == MINUTE.value
        return steps

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=self.channel_ids)
        frame.insert(0, OPERATIONAL_COLUMN, self.operational_code)
        frame.insert(0, STATUS_COLUMN, self.status_code)
        frame.insert(0, TIMESTAMP_COLUMN, format_timestamps(self.timestamps))
        return frame


def _as_float(value: Optional[float]) -> float:
    if value is None:
        return math.nan
    try:
        result = float(value)
    except (TypeError, ValueError):
        return math.nan
    return result if math.isfinite(result) else math.nan


def _cell_to_float(cell: str) -> float:
    # python float parsing, so batch and streaming reads agree bit for bit
    return _as_float(cell.strip() or None)


def format_timestamps(timestamps: pd.DatetimeIndex) -> List[str]:
    if len(timestamps) == 0:
        return []
    fractional = (timestamps.microsecond != 0).any()
    fmt = "%Y-%m-%dT%H:%M:%S.%fZ" if fractional else "%Y-%m-%dT%H:%M:%SZ"
    return list(timestamps.tz_convert("UTC").strftime(fmt))


def parse_timestamp(value: str) -> pd.Timestamp:
    stamp = pd.Timestamp(value)
    if stamp.tzinfo is None:
        return stamp.tz_localize("UTC")
    return stamp.tz_convert("UTC")


def parse_csv(path: Path, schema: Sequence[ChannelSpec]) -> ScadaSeries:
    channels = validate_schema(schema)
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        return ScadaSeries.empty(channels)

    header = [str(column).strip() for column in raw.columns]
    raw.columns = header
    for column in (TIMESTAMP_COLUMN, STATUS_COLUMN, OPERATIONAL_COLUMN, *[c.id for c in channels]):
        if column not in header:
            raise SchemaError(f"{path}: header is missing column {column!r}")
    # blank lines stay in the frame until line numbers are assigned
    raw = raw.fillna("")
    line_numbers = np.arange(len(raw)) + 2
    blank = (raw.apply(lambda column: column.str.strip()) == "").all(axis=1).to_numpy()
    raw = raw.loc[~blank].reset_index(drop=True)
    line_numbers = line_numbers[~blank]
    if raw.empty:
        return ScadaSeries.empty(channels)

    stamps = pd.to_datetime(
        raw[TIMESTAMP_COLUMN].str.strip(), utc=True, format="ISO8601", errors="coerce"
    )
    bad = stamps.isna().to_numpy()
    if bad.any():
        first = int(np.argmax(bad))
        raise DataError(
            f"unparseable timestamp {raw[TIMESTAMP_COLUMN].iloc[first]!r}",
            line=int(line_numbers[first]),
        )
    duplicated = stamps.duplicated().to_numpy()
    if duplicated.any():
        first = int(np.argmax(duplicated))
        raise DataError(
            f"duplicate timestamp {raw[TIMESTAMP_COLUMN].iloc[first]!r}",
            line=int(line_numbers[first]),
        )

    values = np.column_stack(
        [
            raw[channel.id].map(_cell_to_float).to_numpy(dtype=np.float64)
            for channel in channels
        ]
    )
    values[~np.isfinite(values)] = np.nan

    index = pd.DatetimeIndex(stamps)
    order = np.argsort(index.asi8, kind="stable")
    series = ScadaSeries(
        channels=channels,
        timestamps=index[order],
        values=values[order],
        status_code=_code_column(raw[STATUS_COLUMN])[order],
        operational_code=_code_column(raw[OPERATIONAL_COLUMN])[order],
    )
    missing = int(np.isnan(series.values).sum())
    LOGGER.info("[Ingest] parsed %s rows from %s (%s missing cells)", len(series), path, missing)
    return series


def parse_code(cell: Optional[str]) -> Optional[int]:
    """Integer status code of a cell, or None when it is blank or unreadable."""

    try:
        value = float(str(cell).strip())
    except (TypeError, ValueError):
        return None
    return int(value) if math.isfinite(value) else None


def _code_column(column: pd.Series) -> np.ndarray:
    # a blank or unreadable code repeats the previous row, starting from 0
    codes = pd.Series([parse_code(cell) for cell in column], dtype="float64")
    return codes.ffill().fillna(0).to_numpy().astype(np.int64)


def write_csv(series: ScadaSeries, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    series.to_frame().to_csv(path, index=False, na_rep="")
    return path


def average_to_minutes(raw: ScadaSeries) -> ScadaSeries:
    if len(raw) == 0:
        return raw
    minutes = raw.timestamps.floor("min")
    frame = pd.DataFrame(raw.values, columns=raw.channel_ids)
    frame[STATUS_COLUMN] = raw.status_code
    frame[OPERATIONAL_COLUMN] = raw.operational_code
    grouped = frame.groupby(minutes, sort=True)
    means = grouped[raw.channel_ids].mean()
    codes = grouped[[STATUS_COLUMN, OPERATIONAL_COLUMN]].last()
    averaged = ScadaSeries(
        channels=raw.channels,
        timestamps=pd.DatetimeIndex(means.index).tz_convert("UTC"),
        values=means.to_numpy(dtype=np.float64),
        status_code=codes[STATUS_COLUMN].to_numpy().astype(np.int64),
        operational_code=codes[OPERATIONAL_COLUMN].to_numpy().astype(np.int64),
    )
    LOGGER.debug("[Ingest] averaged %s raw rows into %s minutes", len(raw), len(averaged))
    return averaged


class MinuteAccumulator:
    """Streaming counterpart of average_to_minutes: emits a minute once a later one starts."""

    def __init__(self, channels: Sequence[ChannelSpec]) -> None:
        self.channels = tuple(channels)
        self._minute: Optional[pd.Timestamp] = None
        self._sums = np.zeros(len(self.channels))
        self._counts = np.zeros(len(self.channels), dtype=np.int64)
        self._status = 0
        self._operational = 0

    @property
    def pending_minute(self) -> Optional[pd.Timestamp]:
        return self._minute

    def add(self, frame: ScadaFrame) -> Optional[ScadaFrame]:
        minute = pd.Timestamp(frame.timestamp).floor("min")
        emitted: Optional[ScadaFrame] = None
        if self._minute is not None and minute < self._minute:
            raise StreamError(
                f"timestamp {frame.timestamp} precedes the open minute {self._minute}"
            )
        if self._minute is not None and minute > self._minute:
            emitted = self.flush()
        if self._minute is None:
            self._minute = minute
        for index, channel in enumerate(self.channels):
            value = _as_float(frame.values.get(channel.id))
            if not math.isnan(value):
                self._sums[index] += value
                self._counts[index] += 1
        self._status = frame.status_code
        self._operational = frame.operational_code
        return emitted

    def flush(self) -> Optional[ScadaFrame]:
        if self._minute is None:
            return None
        values: Dict[str, Optional[float]] = {}
        for index, channel in enumerate(self.channels):
            count = int(self._counts[index])
            values[channel.id] = float(self._sums[index] / count) if count else None
        frame = ScadaFrame(self._minute, values, int(self._status), int(self._operational))
        self._minute = None
        self._sums[:] = 0.0
        self._counts[:] = 0
        return frame


class CsvRowParser:
    """Parses single appended lines of the ingest CSV format."""

    def __init__(self, header_line: str, schema: Sequence[ChannelSpec]) -> None:
        self.channels = validate_schema(schema)
        self.header = [column.strip() for column in next(csv.reader([header_line]))]
        for column in (
            TIMESTAMP_COLUMN,
            STATUS_COLUMN,
            OPERATIONAL_COLUMN,
            *[c.id for c in self.channels],
        ):
            if column not in self.header:
                raise SchemaError(f"header is missing column {column!r}")
        self._positions = {column: index for index, column in enumerate(self.header)}
        self._codes = {STATUS_COLUMN: 0, OPERATIONAL_COLUMN: 0}

    def _code(self, cells: Sequence[str], column: str) -> int:
        code = parse_code(cells[self._positions[column]])
        if code is None:
            return self._codes[column]
        self._codes[column] = code
        return code

    def remember_codes(self, line: str) -> None:
        """Updates the carried status codes from an already processed line."""

        cells = next(csv.reader([line]), [])
        if len(cells) == len(self.header):
            self._code(cells, STATUS_COLUMN)
            self._code(cells, OPERATIONAL_COLUMN)

    def parse(self, line: str, line_number: int) -> ScadaFrame:
        cells = next(csv.reader([line]), [])
        if len(cells) != len(self.header):
            raise StreamError(
                f"expected {len(self.header)} fields, found {len(cells)}", line=line_number
            )
        try:
            timestamp = parse_timestamp(cells[self._positions[TIMESTAMP_COLUMN]].strip())
        except (ValueError, TypeError) as exc:
            raise StreamError(f"unparseable timestamp: {exc}", line=line_number) from exc
        status = self._code(cells, STATUS_COLUMN)
        operational = self._code(cells, OPERATIONAL_COLUMN)
        values: Dict[str, Optional[float]] = {}
        for channel in self.channels:
            value = _as_float(cells[self._positions[channel.id]].strip() or None)
            values[channel.id] = None if math.isnan(value) else value
        return ScadaFrame(timestamp, values, status, operational)


class MaskLabel(IntEnum):
    NORMAL = 0
    FAULT = 1
    REHEATING = 2
    CAUSAL = 3
    EXTENDED_REHEATING = 4
    EXCLUDED_MISSING = 5

    @property
    def slug(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def from_slug(cls, slug: str) -> "MaskLabel":
        return cls[slug.upper().replace("-", "_")]


EXCLUDED_LABELS = (
    MaskLabel.FAULT,
    MaskLabel.REHEATING,
    MaskLabel.CAUSAL,
    MaskLabel.EXCLUDED_MISSING,
)


@dataclass(frozen=True, slots=True)
class StatusMapping:
    source: str = STATUS_COLUMN
    operating_codes: Tuple[int, ...] = (0,)
    down_codes: Optional[Tuple[int, ...]] = None

    def __post_init__(self) -> None:
        if self.source not in (STATUS_COLUMN, OPERATIONAL_COLUMN):
            raise ConfigurationError(
                f"status.source must be {STATUS_COLUMN!r} or {OPERATIONAL_COLUMN!r}"
            )
        if not self.operating_codes:
            raise ConfigurationError("status.operating_codes must not be empty")

    def codes(self, series: ScadaSeries) -> np.ndarray:
        return series.status_code if self.source == STATUS_COLUMN else series.operational_code

    def frame_code(self, frame: ScadaFrame) -> int:
        return frame.status_code if self.source == STATUS_COLUMN else frame.operational_code

    def is_down(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        operating = np.isin(codes, self.operating_codes)
        if self.down_codes is not None:
            known = operating | np.isin(codes, self.down_codes)
            if not known.all():
                unknown = sorted({int(code) for code in codes[~known]})
                raise ConfigurationError(f"unknown status code(s): {unknown}")
        return ~operating

    def frame_is_down(self, frame: ScadaFrame) -> bool:
        return bool(self.is_down(np.array([self.frame_code(frame)]))[0])


@dataclass(frozen=True, slots=True)
class FaultRecord:
    start: pd.Timestamp
    duration: pd.Timedelta

    @property
    def end(self) -> pd.Timestamp:
        return self.start + self.duration


@dataclass(frozen=True, slots=True, eq=False)
class OperatingMask:
    timestamps: pd.DatetimeIndex
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def label_at(self, index: int) -> MaskLabel:
        return MaskLabel(int(self.labels[index]))

    def is_excluded(self) -> np.ndarray:
        return np.isin(self.labels, [int(label) for label in EXCLUDED_LABELS])

    def is_label(self, label: MaskLabel) -> np.ndarray:
        return self.labels == int(label)

    def counts(self) -> Dict[str, int]:
        return {label.slug: int((self.labels == int(label)).sum()) for label in MaskLabel}

    def take(self, selector: Union[slice, np.ndarray]) -> "OperatingMask":
        return OperatingMask(self.timestamps[selector], self.labels[selector])

    def relabel(self, selector: Union[slice, np.ndarray], label: MaskLabel) -> "OperatingMask":
        labels = self.labels.copy()
        labels[selector] = int(label)
        return OperatingMask(self.timestamps, labels)

    def fault_log(self) -> List[FaultRecord]:
        faults: List[FaultRecord] = []
        is_fault = self.labels == int(MaskLabel.FAULT)
        index = 0
        n = len(is_fault)
        while index < n:
            if not is_fault[index]:
                index += 1
                continue
            start = index
            while index + 1 < n and is_fault[index + 1]:
                index += 1
            duration = self.timestamps[index] - self.timestamps[start] + MINUTE
            faults.append(FaultRecord(self.timestamps[start], duration))
            index += 1
        return faults

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                TIMESTAMP_COLUMN: format_timestamps(self.timestamps),
                "label": [MaskLabel(int(code)).slug for code in self.labels],
            }
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "OperatingMask":
        stamps = pd.to_datetime(frame[TIMESTAMP_COLUMN], utc=True, format="ISO8601")
        labels = np.array(
            [int(MaskLabel.from_slug(str(slug))) for slug in frame["label"]], dtype=np.uint8
        )
        return cls(pd.DatetimeIndex(stamps), labels)


def build_mask(
    series: ScadaSeries,
    reheat_minutes: int = 60,
    status: StatusMapping = StatusMapping(),
    causal_windows: Sequence[Tuple[pd.Timestamp, pd.Timestamp]] = (),
) -> OperatingMask:
    n = len(series)
    labels = np.full(n, int(MaskLabel.NORMAL), dtype=np.uint8)
    if n == 0:
        return OperatingMask(series.timestamps, labels)

    down = status.is_down(status.codes(series))
    labels[down] = int(MaskLabel.FAULT)

    stamps = series.timestamps.asi8
    restart = np.zeros(n, dtype=bool)
    restart[1:] = down[:-1] & ~down[1:]
    sentinel = np.iinfo(np.int64).min
    last_restart = np.maximum.accumulate(np.where(restart, stamps, sentinel))
    has_restart = last_restart != sentinel
    elapsed = stamps - np.where(has_restart, last_restart, stamps)
    reheat_ns = pd.Timedelta(minutes=reheat_minutes).value
    reheating = has_restart & ~down & (elapsed < reheat_ns)
    labels[reheating] = int(MaskLabel.REHEATING)

    for start, end in causal_windows:
        stamps = series.timestamps
        window = (stamps >= pd.Timestamp(start)) & (stamps < pd.Timestamp(end))
        labels[window & (labels == int(MaskLabel.NORMAL))] = int(MaskLabel.CAUSAL)

    missing = ~np.isfinite(series.values).all(axis=1)
    labels[missing & (labels == int(MaskLabel.NORMAL))] = int(MaskLabel.EXCLUDED_MISSING)

    mask = OperatingMask(series.timestamps, labels)
    LOGGER.info("[Ingest] mask counts %s", mask.counts())
    return mask


@dataclass(frozen=True, slots=True, eq=False)
class Partition:
    series: ScadaSeries
    mask: OperatingMask

    def __len__(self) -> int:
        return len(self.series)


def split_train_test(
    series: ScadaSeries,
    mask: OperatingMask,
    train_fraction: float = 0.6,
    min_train_samples: int = 1000,
) -> Tuple[Partition, Partition]:
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if len(mask) != len(series):
        raise DataError(f"mask has {len(mask)} labels for {len(series)} frames")

    boundary = int(len(series) * train_fraction)
    head = slice(0, boundary)
    usable = ~mask.is_excluded()[head]
    train = Partition(series.take(head).take(usable), mask.take(head).take(usable))
    if len(train) < min_train_samples:
        raise InsufficientDataError(
            f"training partition has {len(train)} usable samples, need {min_train_samples}"
        )
    tail = slice(boundary, None)
    test = Partition(series.take(tail), mask.take(tail))
    LOGGER.info("[Ingest] split: %s train samples, %s test frames", len(train), len(test))
    return train, test


@dataclass(frozen=True, slots=True, eq=False)
class NormalizationParams:
    channels: Tuple[str, ...]
    minimum: np.ndarray
    maximum: np.ndarray

    def index_of(self, channel: str) -> int:
        try:
            return self.channels.index(channel)
        except ValueError as exc:
            raise SchemaError(f"no normalization for channel {channel!r}") from exc

    @property
    def scale(self) -> np.ndarray:
        return self.maximum - self.minimum

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.minimum) / self.scale

    def normalize_channel(self, value: float, channel: str) -> float:
        index = self.index_of(channel)
        return (value - self.minimum[index]) / (self.maximum[index] - self.minimum[index])

    def denormalize_channel(self, value: float, channel: str) -> float:
        index = self.index_of(channel)
        return value * (self.maximum[index] - self.minimum[index]) + self.minimum[index]

    def to_dict(self) -> Dict[str, object]:
        return {
            "channels": list(self.channels),
            "minimum": [float(v) for v in self.minimum],
            "maximum": [float(v) for v in self.maximum],
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, object]) -> "NormalizationParams":
        return cls(
            channels=tuple(str(c) for c in payload["channels"]),  # type: ignore[union-attr]
            minimum=np.array(payload["minimum"], dtype=np.float64),
            maximum=np.array(payload["maximum"], dtype=np.float64),
        )


def fit_normalization(train: Union[Partition, ScadaSeries]) -> NormalizationParams:
    series = train.series if isinstance(train, Partition) else train
    if len(series) == 0:
        raise InsufficientDataError("cannot fit normalization on an empty partition")
    minimum = np.empty(len(series.channels))
    maximum = np.empty(len(series.channels))
    for index, channel in enumerate(series.channels):
        column = series.values[:, index]
        present = column[~np.isnan(column)]
        if present.size == 0:
            raise InsufficientDataError(f"channel {channel.id!r} has no values in training data")
        low, high = float(present.min()), float(present.max())
        if high <= low:
            raise DegenerateChannelError(
                f"channel {channel.id!r} is constant ({low}) in training data"
            )
        minimum[index], maximum[index] = low, high
    return NormalizationParams(tuple(series.channel_ids), minimum, maximum)


def apply_normalization(
    frame: Union[ScadaFrame, ScadaSeries, np.ndarray], params: NormalizationParams
) -> np.ndarray:
    """Maps raw values to the training [0, 1] range without clamping."""

    if isinstance(frame, ScadaFrame):
        raw = np.array([_as_float(frame.values.get(c)) for c in params.channels])
        return params.normalize(raw)
    if isinstance(frame, ScadaSeries):
        order = [frame.index_of(c) for c in params.channels]
        return params.normalize(frame.values[:, order])
    return params.normalize(frame)


def denormalize(value: float, channel: str, params: NormalizationParams) -> float:
    return params.denormalize_channel(value, channel)
