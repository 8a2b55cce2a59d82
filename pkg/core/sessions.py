"""Episode sessions for the HTTP surface: in-memory, idle-expiring, one lock per session."""

from __future__ import annotations

import logging
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from threading import Lock
from typing import Dict, List, Optional, Protocol

from core.episode import EpisodeState

logger = logging.getLogger(__name__)


class SessionNotFound(KeyError):
    """Raised for unknown, deleted or expired session ids."""


@dataclass
class SessionRecord:
    session_id: str
    episode: EpisodeState
    last_seen: datetime
    lock: Lock = field(default_factory=Lock, repr=False)


class SessionRepository(Protocol):
    """Storage abstraction for :class:`SessionService`."""

    def get(self, session_id: str) -> Optional[SessionRecord]: ...

    def put(self, record: SessionRecord) -> None: ...

    def delete(self, session_id: str) -> bool: ...

    def ids(self) -> List[str]: ...


class InMemorySessionRepository:
    def __init__(self) -> None:
        self._sessions: Dict[str, SessionRecord] = {}
        self._lock = Lock()

    def get(self, session_id: str) -> Optional[SessionRecord]:
        with self._lock:
            return self._sessions.get(session_id)

    def put(self, record: SessionRecord) -> None:
        with self._lock:
            self._sessions[record.session_id] = record

    def delete(self, session_id: str) -> bool:
        with self._lock:
            return self._sessions.pop(session_id, None) is not None

    def ids(self) -> List[str]:
        with self._lock:
            return list(self._sessions)


@dataclass
class SessionService:
    """Creates, resolves and expires sessions; touching a session refreshes its idle timer."""

    repository: SessionRepository = field(default_factory=InMemorySessionRepository)
    session_timeout: timedelta = timedelta(hours=1)

    def create(self, episode: EpisodeState, *, now: Optional[datetime] = None) -> SessionRecord:
        now = now or datetime.now(timezone.utc)
        removed = self.purge_expired(now=now)
        if removed:
            logger.info("[sessions] purged %s idle session(s)", removed)
        record = SessionRecord(session_id=uuid.uuid4().hex, episode=episode, last_seen=now)
        self.repository.put(record)
        logger.info("[sessions] opened %s for %s", record.session_id, episode.bundle.bundle_id)
        return record

    def get(self, session_id: str, *, now: Optional[datetime] = None) -> SessionRecord:
        now = now or datetime.now(timezone.utc)
        record = self.repository.get(session_id)
        if record is None:
            raise SessionNotFound(session_id)
        if now - record.last_seen > self.session_timeout:
            logger.info("[sessions] session %s expired", session_id)
            self.repository.delete(session_id)
            raise SessionNotFound(session_id)
        record.last_seen = now
        return record

    def delete(self, session_id: str) -> None:
        if not self.repository.delete(session_id):
            raise SessionNotFound(session_id)

    def purge_expired(self, *, now: Optional[datetime] = None) -> int:
        now = now or datetime.now(timezone.utc)
        removed = 0
        for session_id in self.repository.ids():
            record = self.repository.get(session_id)
            if record is not None and now - record.last_seen > self.session_timeout:
                self.repository.delete(session_id)
                removed += 1
        return removed


_service: Optional[SessionService] = None


def set_session_service(service: Optional[SessionService]) -> None:
    global _service
    _service = service


def get_session_service() -> SessionService:
    global _service
    if _service is None:
        from core.settings import load_settings

        ttl = load_settings().server.session_ttl_seconds
        _service = SessionService(session_timeout=timedelta(seconds=ttl))
    return _service


__all__ = [
    "InMemorySessionRepository",
    "SessionNotFound",
    "SessionRecord",
    "SessionRepository",
    "SessionService",
    "get_session_service",
    "set_session_service",
]
