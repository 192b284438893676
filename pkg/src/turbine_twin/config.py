from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import load_dotenv

from .alerting import SinkConfig
from .anomaly_detector import DetectorConfig
from .errors import ConfigurationError, SchemaError
from .nom_training import TrainingConfig
from .scada_ingest import DEFAULT_SCHEMA, ChannelSpec, StatusMapping, validate_schema

load_dotenv()

BASE_DIR = Path(__file__).resolve().parents[2]

LOGGER = logging.getLogger(__name__)


@dataclass(slots=True)
class Settings:
    data_dir: Path
    work_dir: Path
    db_path: Path
    config_path: Path
    templates_dir: Path
    log_level: str


@lru_cache
def get_settings() -> Settings:
    data_dir = Path(os.getenv("TWIN_DATA_DIR", BASE_DIR / "data"))
    db_path = Path(os.getenv("TWIN_DB_PATH", BASE_DIR / "db" / "turbine_twin.sqlite"))
    config_path = Path(os.getenv("TWIN_CONFIG", BASE_DIR / "config" / "twin.json"))
    templates_dir = Path(os.getenv("TEMPLATE_DIR", BASE_DIR / "templates"))
    work_dir = data_dir / "work"

    data_dir.mkdir(parents=True, exist_ok=True)
    work_dir.mkdir(parents=True, exist_ok=True)
    db_path.parent.mkdir(parents=True, exist_ok=True)

    return Settings(
        data_dir=data_dir,
        work_dir=work_dir,
        db_path=db_path,
        config_path=config_path,
        templates_dir=templates_dir,
        log_level=os.getenv("TWIN_LOG_LEVEL", "INFO").upper(),
    )


@dataclass(frozen=True, slots=True)
class DiagnosisConfig:
    dominance_fraction: float = 0.7
    shap_factor: float = 1.2
    samples: int = 1000
    background_size: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.dominance_fraction < 1.0:
            raise ConfigurationError("diagnosis.dominance_fraction must lie in (0, 1)")
        if self.shap_factor <= 0:
            raise ConfigurationError("diagnosis.shap_factor must be positive")
        if self.samples < 1 or self.background_size < 1:
            raise ConfigurationError("diagnosis.samples and diagnosis.background_size must be >= 1")


@dataclass(slots=True)
class TwinConfig:
    farm: str = "demo-farm"
    turbine: str = "WT01"
    channels: Tuple[ChannelSpec, ...] = DEFAULT_SCHEMA
    status: StatusMapping = StatusMapping()
    reheat_minutes: int = 60
    train_fraction: float = 0.6
    min_train_samples: int = 1000
    training: TrainingConfig = field(default_factory=TrainingConfig)
    safety_factor: float = 1.2
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    diagnosis: DiagnosisConfig = field(default_factory=DiagnosisConfig)
    sinks: Tuple[SinkConfig, ...] = (SinkConfig(kind="stdout"),)

    def channel(self, channel_id: str) -> ChannelSpec:
        for channel in self.channels:
            if channel.id == channel_id:
                return channel
        raise SchemaError(f"unknown channel {channel_id!r}")


def _section(payload: Mapping[str, Any], key: str) -> Dict[str, Any]:
    value = payload.get(key, {})
    if not isinstance(value, Mapping):
        raise ConfigurationError(f"{key} must be an object")
    return dict(value)


def _build(cls: Any, values: Mapping[str, Any], key: str) -> Any:
    known = {item.name for item in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"{key}: unknown key(s) {unknown}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{key}: {exc}") from exc


_TOP_LEVEL_KEYS = {
    "farm",
    "turbine",
    "channels",
    "status",
    "reheat_minutes",
    "train_fraction",
    "min_train_samples",
    "training",
    "detector",
    "diagnosis",
    "sinks",
}


def twin_config_from_dict(payload: Mapping[str, Any]) -> TwinConfig:
    unknown = sorted(set(payload) - _TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown config key(s) {unknown}")
    try:
        channels = tuple(ChannelSpec(**item) for item in payload.get("channels", ()))
    except TypeError as exc:
        raise ConfigurationError(f"channels: {exc}") from exc
    channels = validate_schema(channels or DEFAULT_SCHEMA)

    status_values = _section(payload, "status")
    for name in ("operating_codes", "down_codes"):
        if status_values.get(name) is not None:
            status_values[name] = tuple(int(code) for code in status_values[name])
    status = _build(StatusMapping, status_values, "status")

    reheat_minutes = int(payload.get("reheat_minutes", 60))
    detector_values = _section(payload, "detector")
    safety_factor = float(detector_values.pop("safety_factor", 1.2))
    if safety_factor <= 0:
        raise ConfigurationError("detector.safety_factor must be positive")
    detector_values.setdefault("reheat_minutes", reheat_minutes)
    detector_values["status"] = status
    detector = _build(DetectorConfig, detector_values, "detector")

    sinks = tuple(
        _build(SinkConfig, item, f"sinks[{index}]")
        for index, item in enumerate(payload.get("sinks", [{"kind": "stdout"}]))
    )
    train_fraction = float(payload.get("train_fraction", 0.6))
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError("train_fraction must lie in (0, 1)")

    return TwinConfig(
        farm=str(payload.get("farm", "demo-farm")),
        turbine=str(payload.get("turbine", "WT01")),
        channels=channels,
        status=status,
        reheat_minutes=reheat_minutes,
        train_fraction=train_fraction,
        min_train_samples=int(payload.get("min_train_samples", 1000)),
        training=_build(TrainingConfig, _section(payload, "training"), "training"),
        safety_factor=safety_factor,
        detector=detector,
        diagnosis=_build(DiagnosisConfig, _section(payload, "diagnosis"), "diagnosis"),
        sinks=sinks,
    )


def load_twin_config(path: Optional[Path] = None) -> TwinConfig:
    """Reads the twin JSON config; an absent file gives the defaults."""

    path = path or get_settings().config_path
    if not path.exists():
        LOGGER.info("[Config] %s not found, using defaults", path)
        return TwinConfig()
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(payload, Mapping):
        raise ConfigurationError(f"{path}: top level must be an object")
    return twin_config_from_dict(payload)
