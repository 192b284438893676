from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import requests
import typer

from .errors import ConfigurationError, DataError, DeliveryError

LOGGER = logging.getLogger(__name__)

SINK_KINDS = ("stdout", "file", "webhook")
CONTENT_TYPE = "application/json"

_RETRY_STATUS = {429, 500, 502, 503, 504}


@dataclass(frozen=True, slots=True)
class AlertPayload:
    farm: str
    turbine: str
    component: str
    signal_type: str
    sensor: str
    timestamp: str
    kind: str
    diagnosis: str = ""
    coincidence_probability: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("farm", "turbine", "component", "signal_type", "sensor", "timestamp", "kind"):
            if not getattr(self, name):
                raise DataError(f"alert payload field {name!r} must be non-empty")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "AlertPayload":
        try:
            return cls(**json.loads(text))
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"invalid alert payload: {exc}") from exc


@dataclass(frozen=True, slots=True)
class SinkConfig:
    kind: str
    path: Optional[str] = None
    url: Optional[str] = None
    auth_header: Optional[str] = None
    attempts: int = 3
    backoff_base: float = 0.5
    backoff_multiplier: float = 2.0
    max_delay: float = 30.0
    timeout: float = 10.0

    def __post_init__(self) -> None:
        if self.kind not in SINK_KINDS:
            raise ConfigurationError(f"sink kind must be one of {SINK_KINDS}, got {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ConfigurationError("file sink needs a path")
        if self.kind == "webhook" and not self.url:
            raise ConfigurationError("webhook sink needs a url")
        if self.attempts < 1:
            raise ConfigurationError("sink attempts must be >= 1")

    @property
    def target(self) -> str:
        return self.path or self.url or self.kind


def backoff_delay(attempt: int, base: float, multiplier: float, max_delay: float) -> float:
    """Delay after the ``attempt``-th failure (0-based), capped at ``max_delay``."""

    return min(base * (multiplier**attempt), max_delay)


@dataclass(slots=True)
class SinkResult:
    kind: str
    target: str
    delivered: bool = False
    attempts: int = 0
    last_error: Optional[str] = None


@dataclass(slots=True)
class DeliveryReport:
    payload: AlertPayload
    results: List[SinkResult] = field(default_factory=list)

    @property
    def delivered(self) -> bool:
        return any(result.delivered for result in self.results)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "payload": self.payload.to_dict(),
            "delivered": self.delivered,
            "sinks": [asdict(result) for result in self.results],
        }


def _auth_headers(auth_header: Optional[str]) -> Dict[str, str]:
    if not auth_header:
        return {}
    if ":" in auth_header:
        name, value = auth_header.split(":", 1)
        return {name.strip(): value.strip()}
    return {"Authorization": auth_header}


def _post_webhook(
    payload: AlertPayload, sink: SinkConfig, result: SinkResult, sleep: Callable[[float], None]
) -> None:
    headers = {"Content-Type": CONTENT_TYPE, **_auth_headers(sink.auth_header)}
    body = payload.to_json().encode("utf-8")
    for attempt in range(sink.attempts):
        result.attempts = attempt + 1
        try:
            response = requests.post(sink.url, data=body, headers=headers, timeout=sink.timeout)
        except requests.RequestException as exc:
            result.last_error = str(exc)
        else:
            if response.status_code < 300:
                result.delivered = True
                result.last_error = None
                return
            result.last_error = f"HTTP {response.status_code}"
            if response.status_code not in _RETRY_STATUS:
                return
        if attempt + 1 < sink.attempts:
            delay = backoff_delay(
                attempt, sink.backoff_base, sink.backoff_multiplier, sink.max_delay
            )
            LOGGER.warning(
                "[Alert] webhook %s failed (%s), retrying in %.2fs",
                sink.url,
                result.last_error,
                delay,
            )
            sleep(delay)


def _deliver(
    payload: AlertPayload, sink: SinkConfig, sleep: Callable[[float], None]
) -> SinkResult:
    result = SinkResult(kind=sink.kind, target=sink.target)
    if sink.kind == "webhook":
        _post_webhook(payload, sink, result, sleep)
        return result
    result.attempts = 1
    try:
        if sink.kind == "stdout":
            typer.echo(payload.to_json())
        else:
            path = Path(sink.path)  # type: ignore[arg-type]
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("a", encoding="utf-8") as handle:
                handle.write(payload.to_json() + "\n")
        result.delivered = True
    except OSError as exc:
        result.last_error = str(exc)
    return result


def dispatch_alert(
    payload: AlertPayload,
    sinks: Sequence[SinkConfig],
    sleep: Callable[[float], None] = time.sleep,
) -> DeliveryReport:
    """Sends ``payload`` to every sink; raises DeliveryError only when all of them fail."""

    if not sinks:
        raise ConfigurationError("at least one alert sink must be configured")
    report = DeliveryReport(payload)
    for sink in sinks:
        result = _deliver(payload, sink, sleep)
        report.results.append(result)
        if not result.delivered:
            LOGGER.warning(
                "[Alert] %s sink %s failed: %s", sink.kind, sink.target, result.last_error
            )
    if not report.delivered:
        raise DeliveryError(
            f"alert for {payload.sensor} at {payload.timestamp} was not delivered to any sink",
            report,
        )
    LOGGER.info("[Alert] delivered %s alert for %s", payload.kind, payload.sensor)
    return report
