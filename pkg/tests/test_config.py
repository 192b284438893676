from __future__ import annotations

import json
from pathlib import Path

import pytest

from src.turbine_twin.config import (
    TwinConfig,
    get_settings,
    load_twin_config,
    twin_config_from_dict,
)
from src.turbine_twin.errors import ConfigurationError, SchemaError

REPO_CONFIG = Path(__file__).resolve().parents[1] / "config" / "twin.json"


def test_settings_follow_environment(tmp_path: Path) -> None:
    settings = get_settings()

    assert settings.data_dir == tmp_path / "data"
    assert settings.work_dir == tmp_path / "data" / "work"
    assert settings.work_dir.is_dir()
    assert settings.db_path.parent.is_dir()


def test_missing_config_file_gives_defaults() -> None:
    config = load_twin_config()

    assert config == TwinConfig()
    assert config.detector.missing_threshold == 10
    assert config.safety_factor == 1.2
    assert [sink.kind for sink in config.sinks] == ["stdout"]


def test_repository_config_loads() -> None:
    config = load_twin_config(REPO_CONFIG)

    assert config.turbine == "WT01"
    assert config.status.operating_codes == (0, 3)
    assert config.detector.status == config.status
    assert config.detector.reheat_minutes == 60
    assert config.training.lstm_window == 30
    assert config.diagnosis.dominance_fraction == 0.7
    assert [sink.kind for sink in config.sinks] == ["stdout", "file"]
    assert config.channel("rotor_rpm").component == "rotor"
    with pytest.raises(SchemaError):
        config.channel("nacelle_temp")


def test_reheat_minutes_feed_the_detector() -> None:
    config = twin_config_from_dict({"reheat_minutes": 45, "detector": {"safety_factor": 1.5}})

    assert config.detector.reheat_minutes == 45
    assert config.safety_factor == 1.5


@pytest.mark.parametrize(
    "payload",
    [
        {"colour": "blue"},
        {"training": {"epochs": 3, "optimizer": "sgd"}},
        {"training": {"restarts": 0}},
        {"detector": {"safety_factor": -1}},
        {"train_fraction": 1.5},
        {"sinks": [{"kind": "file"}]},
        {"status": {"source": "alarm_code"}},
        {"diagnosis": "fast"},
    ],
)
def test_invalid_config_is_rejected(payload: dict) -> None:
    with pytest.raises(ConfigurationError):
        twin_config_from_dict(payload)


def test_invalid_json_is_a_configuration_error(tmp_path: Path) -> None:
    path = tmp_path / "twin.json"
    path.write_text("{broken", encoding="utf-8")

    with pytest.raises(ConfigurationError):
        load_twin_config(path)

    path.write_text(json.dumps([1, 2]), encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_twin_config(path)
