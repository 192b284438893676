from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .anomaly_detector import EVENT_KINDS
from .storage import list_alerts, list_events


def build_app() -> FastAPI:
    app = FastAPI(title="Turbine Twin API", version="0.1.0")

    @app.get("/health")
    def health() -> dict[str, str]:
        return {"status": "ok"}

    @app.get("/events", response_model=list[dict])
    def events(channel: str | None = None, kind: str | None = None) -> list[dict]:
        if kind is not None and kind not in EVENT_KINDS:
            raise HTTPException(status_code=400, detail=f"unknown event kind {kind!r}")
        return list_events(channel=channel, kind=kind)

    @app.get("/alerts", response_model=list[dict])
    def alerts(turbine: str | None = None) -> list[dict]:
        return list_alerts(turbine=turbine)

    return app
