from __future__ import annotations

import pandas as pd
from fastapi.testclient import TestClient

from src.turbine_twin import storage
from src.turbine_twin.anomaly_detector import MEASUREMENT_ANOMALY, SENSOR_ANOMALY, AnomalyEvent
from src.turbine_twin.api import build_app


def _seed_events() -> None:
    stamp = pd.Timestamp("2021-03-12T01:12:00Z")
    events = [
        AnomalyEvent(stamp, "generator_rotor_temp", MEASUREMENT_ANOMALY, 0.31, 0.2),
        AnomalyEvent(stamp + pd.Timedelta(minutes=9), "gearbox_oil_temp", SENSOR_ANOMALY),
    ]
    storage.record_events("WT01", "dense", [event.to_dict() for event in events])


def test_health() -> None:
    client = TestClient(build_app())

    response = client.get("/health")

    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_events_are_filtered_by_channel_and_kind() -> None:
    _seed_events()
    client = TestClient(build_app())

    everything = client.get("/events").json()
    rotor = client.get("/events", params={"channel": "generator_rotor_temp"}).json()
    sensor = client.get("/events", params={"kind": SENSOR_ANOMALY}).json()

    assert [row["channel"] for row in everything] == ["generator_rotor_temp", "gearbox_oil_temp"]
    assert len(rotor) == 1 and rotor[0]["residual"] == 0.31
    assert [row["timestamp"] for row in sensor] == ["2021-03-12T01:21:00Z"]
    assert client.get("/events", params={"kind": "bogus"}).status_code == 400


def test_alerts_listing() -> None:
    storage.record_alert(
        "WT01",
        "sensor-anomaly@2021-03-12T01:21:00Z",
        {"sensor": "gearbox_oil_temp", "kind": SENSOR_ANOMALY},
        {"delivered": True, "results": []},
    )
    client = TestClient(build_app())

    alerts = client.get("/alerts", params={"turbine": "WT01"}).json()

    assert len(alerts) == 1
    assert alerts[0]["incident_key"] == "sensor-anomaly@2021-03-12T01:21:00Z"
    assert alerts[0]["delivered"] is True
    assert client.get("/alerts", params={"turbine": "WT02"}).json() == []
