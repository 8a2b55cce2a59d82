"""Tests for core.sessions module."""

from __future__ import annotations

import pathlib
import sys
from datetime import datetime, timedelta, timezone

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from core import sessions
from core.agents import ScriptedUser
from core.episode import start_episode
from core.sessions import SessionNotFound, SessionService

NOON = datetime(2024, 3, 15, 12, 0, tzinfo=timezone.utc)


@pytest.fixture()
def service():
    return SessionService(session_timeout=timedelta(minutes=30))


@pytest.fixture()
def episode(toy_bundle):
    return start_episode(toy_bundle, ScriptedUser(["hi"]))


def test_sessions_resolve_and_refresh(service, episode):
    record = service.create(episode, now=NOON)

    later = NOON + timedelta(minutes=20)
    assert service.get(record.session_id, now=later).episode is episode
    assert service.get(record.session_id, now=later + timedelta(minutes=20)).last_seen == later + timedelta(minutes=20)


def test_idle_sessions_expire(service, episode):
    record = service.create(episode, now=NOON)

    with pytest.raises(SessionNotFound):
        service.get(record.session_id, now=NOON + timedelta(minutes=31))
    with pytest.raises(SessionNotFound):
        service.get(record.session_id, now=NOON)


def test_delete_and_unknown_ids(service, episode):
    record = service.create(episode, now=NOON)

    service.delete(record.session_id)

    with pytest.raises(SessionNotFound):
        service.delete(record.session_id)
    with pytest.raises(SessionNotFound):
        service.get("missing")


def test_purge_expired_counts_removed(service, episode):
    service.create(episode, now=NOON)
    fresh = service.create(episode, now=NOON + timedelta(minutes=25))

    assert service.purge_expired(now=NOON + timedelta(minutes=40)) == 1
    assert service.repository.ids() == [fresh.session_id]


def test_session_service_override(monkeypatch):
    custom = SessionService()
    monkeypatch.setattr(sessions, "_service", None)

    sessions.set_session_service(custom)

    assert sessions.get_session_service() is custom


def test_create_evicts_idle_sessions(service, episode):
    for _ in range(5):
        service.create(episode, now=NOON)

    latest = service.create(episode, now=NOON + timedelta(days=1))

    assert service.repository.ids() == [latest.session_id]
