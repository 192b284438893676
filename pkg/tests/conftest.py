from __future__ import annotations

from typing import Optional

import numpy as np
import pandas as pd
import pytest

from src.turbine_twin import config as twin_config
from src.turbine_twin import storage
from src.turbine_twin.scada_ingest import DEFAULT_SCHEMA, ScadaSeries

START = pd.Timestamp("2021-01-01T00:00:00Z")


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Points settings and the sqlite engine at a per-test directory."""

    monkeypatch.setenv("TWIN_DATA_DIR", str(tmp_path / "data"))
    monkeypatch.setenv("TWIN_DB_PATH", str(tmp_path / "db" / "twin.sqlite"))
    monkeypatch.setenv("TWIN_CONFIG", str(tmp_path / "absent.json"))
    twin_config.get_settings.cache_clear()
    storage.reset_engine()
    yield
    storage.reset_engine()
    twin_config.get_settings.cache_clear()


def make_series(
    minutes: int,
    seed: int = 0,
    status: Optional[np.ndarray] = None,
    start: pd.Timestamp = START,
) -> ScadaSeries:
    """Smooth synthetic frames on the default schema: temperatures follow rpm and ambient."""

    rng = np.random.default_rng(seed)
    t = np.arange(minutes)
    rpm = 10.0 + 4.0 * np.sin(2 * np.pi * t / 600.0) + rng.normal(0, 0.1, minutes)
    ambient = 8.0 + 3.0 * np.cos(2 * np.pi * t / 1440.0) + rng.normal(0, 0.05, minutes)
    columns = []
    for index, channel in enumerate(DEFAULT_SCHEMA):
        if channel.id == "ambient_temp":
            columns.append(ambient)
        elif channel.id == "rotor_rpm":
            columns.append(rpm)
        else:
            gain = 1.0 + 0.3 * index
            columns.append(ambient + gain * rpm + rng.normal(0, 0.05, minutes))
    codes = np.zeros(minutes, dtype=np.int64) if status is None else np.asarray(status)
    return ScadaSeries(
        channels=DEFAULT_SCHEMA,
        timestamps=pd.date_range(start, periods=minutes, freq="min"),
        values=np.column_stack(columns),
        status_code=codes.astype(np.int64),
        operational_code=np.zeros(minutes, dtype=np.int64),
    )


@pytest.fixture
def series_factory():
    return make_series
