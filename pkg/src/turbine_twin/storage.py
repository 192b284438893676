from __future__ import annotations

from contextlib import contextmanager
from datetime import datetime
from typing import Any, Dict, Iterable, Iterator, List, Optional

from sqlmodel import Session, SQLModel, create_engine, select

from .config import get_settings
from .models import AlertRecord, EventRecord, FollowCursor

_engine = None


def _get_engine():
    global _engine
    if _engine is None:
        settings = get_settings()
        _engine = create_engine(f"sqlite:///{settings.db_path}", echo=False)
        SQLModel.metadata.create_all(_engine)
    return _engine


def reset_engine() -> None:
    """Drops the cached engine so the next session picks up a changed TWIN_DB_PATH."""

    global _engine
    if _engine is not None:
        _engine.dispose()
    _engine = None


@contextmanager
def session_scope() -> Iterator[Session]:
    session = Session(_get_engine())
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()


def record_events(turbine: str, model_kind: str, rows: Iterable[Dict[str, Any]]) -> int:
    """Stores event-log rows (``AnomalyEvent.to_dict()`` shape)."""

    count = 0
    with session_scope() as session:
        for row in rows:
            session.add(EventRecord(turbine=turbine, model_kind=model_kind, **row))
            count += 1
    return count


def clear_events(turbine: str, model_kind: str) -> None:
    with session_scope() as session:
        query = select(EventRecord).where(
            EventRecord.turbine == turbine, EventRecord.model_kind == model_kind
        )
        for record in session.exec(query).all():
            session.delete(record)


def list_events(channel: Optional[str] = None, kind: Optional[str] = None) -> List[Dict[str, Any]]:
    with session_scope() as session:
        query = select(EventRecord).order_by(EventRecord.timestamp, EventRecord.id)
        if channel:
            query = query.where(EventRecord.channel == channel)
        if kind:
            query = query.where(EventRecord.kind == kind)
        return [record.model_dump(exclude={"created_at"}) for record in session.exec(query).all()]


def alert_exists(turbine: str, incident_key: str) -> bool:
    with session_scope() as session:
        query = select(AlertRecord).where(
            AlertRecord.turbine == turbine, AlertRecord.incident_key == incident_key
        )
        return session.exec(query).first() is not None


def record_alert(
    turbine: str, incident_key: str, payload: Dict[str, Any], delivery: Optional[Dict[str, Any]]
) -> None:
    with session_scope() as session:
        session.add(
            AlertRecord(
                turbine=turbine,
                incident_key=incident_key,
                payload=payload,
                delivered=bool(delivery and delivery.get("delivered")),
                delivery=delivery,
            )
        )


def list_alerts(turbine: Optional[str] = None) -> List[Dict[str, Any]]:
    with session_scope() as session:
        query = select(AlertRecord).order_by(AlertRecord.id)
        if turbine:
            query = query.where(AlertRecord.turbine == turbine)
        return [
            {
                "turbine": record.turbine,
                "incident_key": record.incident_key,
                "delivered": record.delivered,
                **record.payload,
            }
            for record in session.exec(query).all()
        ]


def load_cursor(turbine: str) -> Optional[Dict[str, Any]]:
    with session_scope() as session:
        cursor = session.exec(select(FollowCursor).where(FollowCursor.turbine == turbine)).first()
        if cursor is None:
            return None
        return {
            "source": cursor.source,
            "last_timestamp": cursor.last_timestamp,
            "lines_consumed": cursor.lines_consumed,
            "state": cursor.state,
        }


def save_cursor(
    turbine: str,
    source: str,
    last_timestamp: Optional[str],
    lines_consumed: int,
    state: Dict[str, Any],
) -> None:
    with session_scope() as session:
        cursor = session.exec(select(FollowCursor).where(FollowCursor.turbine == turbine)).first()
        if cursor is None:
            cursor = FollowCursor(turbine=turbine, source=source)
        cursor.source = source
        cursor.last_timestamp = last_timestamp
        cursor.lines_consumed = lines_consumed
        cursor.state = state
        cursor.updated_at = datetime.now()
        session.add(cursor)
