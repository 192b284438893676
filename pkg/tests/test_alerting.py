from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List

import pytest
import requests

from src.turbine_twin import alerting
from src.turbine_twin.alerting import (
    AlertPayload,
    SinkConfig,
    backoff_delay,
    dispatch_alert,
)
from src.turbine_twin.errors import ConfigurationError, DataError, DeliveryError


def _payload(**overrides: Any) -> AlertPayload:
    values: Dict[str, Any] = {
        "farm": "demo-farm",
        "turbine": "WT01",
        "component": "generator",
        "signal_type": "temperature",
        "sensor": "generator_rotor_temp",
        "timestamp": "2021-03-12T01:12:00Z",
        "kind": "measurement-anomaly",
        "diagnosis": "generator_rotor_temp dominates its own prediction (81% of total impact)",
        "coincidence_probability": 0.0123,
    }
    values.update(overrides)
    return AlertPayload(**values)


class _Response:
    def __init__(self, status_code: int) -> None:
        self.status_code = status_code


class _FakeWebhook:
    def __init__(self, statuses: List[Any]) -> None:
        self.statuses = list(statuses)
        self.calls: List[Dict[str, Any]] = []

    def __call__(self, url: str, data: bytes, headers: Dict[str, str], timeout: float) -> _Response:
        self.calls.append({"url": url, "data": data, "headers": headers, "timeout": timeout})
        status = self.statuses.pop(0)
        if isinstance(status, Exception):
            raise status
        return _Response(status)


def test_payload_json_round_trip() -> None:
    payload = _payload()

    text = payload.to_json()

    assert AlertPayload.from_json(text) == payload
    assert json.loads(text)["sensor"] == "generator_rotor_temp"
    with pytest.raises(DataError):
        AlertPayload.from_json('{"farm": "x"}')
    with pytest.raises(DataError):
        AlertPayload.from_json("not json")


def test_payload_requires_non_empty_fields() -> None:
    with pytest.raises(DataError):
        _payload(sensor="")
    with pytest.raises(DataError):
        _payload(timestamp="")
    assert _payload(diagnosis="").diagnosis == ""


def test_stdout_sink_prints_one_json_line(capsys: pytest.CaptureFixture[str]) -> None:
    report = dispatch_alert(_payload(), [SinkConfig(kind="stdout")])

    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1
    assert AlertPayload.from_json(out[0]) == _payload()
    assert report.delivered
    assert report.results[0].attempts == 1


def test_file_sink_appends(tmp_path: Path) -> None:
    path = tmp_path / "alerts" / "alerts.jsonl"
    sink = SinkConfig(kind="file", path=str(path))

    dispatch_alert(_payload(), [sink])
    dispatch_alert(_payload(sensor="gearbox_oil_temp"), [sink])

    lines = path.read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["sensor"] for line in lines] == [
        "generator_rotor_temp",
        "gearbox_oil_temp",
    ]


def test_webhook_retries_with_backoff(monkeypatch: pytest.MonkeyPatch) -> None:
    fake = _FakeWebhook([503, requests.ConnectionError("refused"), 200])
    monkeypatch.setattr(alerting.requests, "post", fake)
    delays: List[float] = []
    sink = SinkConfig(
        kind="webhook", url="https://hooks.example/alerts", auth_header="X-Token: abc"
    )

    report = dispatch_alert(_payload(), [sink], sleep=delays.append)

    assert report.delivered
    assert report.results[0].attempts == 3
    assert delays == [0.5, 1.0]
    headers = fake.calls[0]["headers"]
    assert headers["Content-Type"] == "application/json"
    assert headers["X-Token"] == "abc"
    assert json.loads(fake.calls[0]["data"].decode("utf-8")) == _payload().to_dict()


def test_webhook_does_not_retry_client_errors(monkeypatch: pytest.MonkeyPatch) -> None:
    fake = _FakeWebhook([400])
    monkeypatch.setattr(alerting.requests, "post", fake)
    sink = SinkConfig(kind="webhook", url="https://hooks.example/alerts", auth_header="secret")

    with pytest.raises(DeliveryError) as excinfo:
        dispatch_alert(_payload(), [sink], sleep=lambda _: None)

    assert len(fake.calls) == 1
    assert fake.calls[0]["headers"]["Authorization"] == "secret"
    report = excinfo.value.report
    assert report.results[0].last_error == "HTTP 400"
    assert report.to_dict()["delivered"] is False


def test_one_working_sink_is_enough(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    fake = _FakeWebhook([500, 500])
    monkeypatch.setattr(alerting.requests, "post", fake)
    sinks = [
        SinkConfig(kind="webhook", url="https://hooks.example/alerts", attempts=2),
        SinkConfig(kind="file", path=str(tmp_path / "alerts.jsonl")),
    ]

    report = dispatch_alert(_payload(), sinks, sleep=lambda _: None)

    assert report.delivered
    assert [result.delivered for result in report.results] == [False, True]
    assert report.results[0].attempts == 2


def test_all_sinks_failing_raises(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.setattr(alerting.requests, "post", _FakeWebhook([502, 502, 502]))
    blocker = tmp_path / "not-a-dir"
    blocker.write_text("", encoding="utf-8")
    sinks = [
        SinkConfig(kind="webhook", url="https://hooks.example/alerts"),
        SinkConfig(kind="file", path=str(blocker / "alerts.jsonl")),
    ]

    with pytest.raises(DeliveryError):
        dispatch_alert(_payload(), sinks, sleep=lambda _: None)


def test_sink_config_and_backoff() -> None:
    assert backoff_delay(0, 0.5, 2.0, 30.0) == 0.5
    assert backoff_delay(3, 0.5, 2.0, 30.0) == 4.0
    assert backoff_delay(10, 0.5, 2.0, 30.0) == 30.0
    with pytest.raises(ConfigurationError):
        SinkConfig(kind="pager")
    with pytest.raises(ConfigurationError):
        SinkConfig(kind="webhook")
    with pytest.raises(ConfigurationError):
        SinkConfig(kind="file", path="a.jsonl", attempts=0)
    with pytest.raises(ConfigurationError):
        dispatch_alert(_payload(), [])
