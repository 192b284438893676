from __future__ import annotations

from datetime import datetime
from typing import Optional

from sqlalchemy import JSON, Column, UniqueConstraint
from sqlmodel import Field, SQLModel


class EventRecord(SQLModel, table=True):
    id: int = Field(default=None, primary_key=True)
    turbine: str = Field(index=True)
    model_kind: str = Field(default="dense", index=True)
    timestamp: str = Field(index=True)
    channel: str = Field(index=True)
    kind: str = Field(index=True)
    residual: Optional[float] = None
    threshold: Optional[float] = None
    coincidence_probability: Optional[float] = None
    lead_minutes: Optional[float] = None
    diagnosis: Optional[dict] = Field(default=None, sa_column=Column(JSON))
    created_at: datetime = Field(default_factory=datetime.now, index=True)


class AlertRecord(SQLModel, table=True):
    __table_args__ = (UniqueConstraint("turbine", "incident_key"),)

    id: int = Field(default=None, primary_key=True)
    turbine: str = Field(index=True)
    incident_key: str = Field(index=True)
    payload: dict = Field(sa_column=Column(JSON))
    delivered: bool = Field(default=False, index=True)
    delivery: Optional[dict] = Field(default=None, sa_column=Column(JSON))
    created_at: datetime = Field(default_factory=datetime.now, index=True)


class FollowCursor(SQLModel, table=True):
    id: int = Field(default=None, primary_key=True)
    turbine: str = Field(index=True, unique=True)
    source: str
    last_timestamp: Optional[str] = None
    lines_consumed: int = 0
    state: Optional[dict] = Field(default=None, sa_column=Column(JSON))
    updated_at: datetime = Field(default_factory=datetime.now)
