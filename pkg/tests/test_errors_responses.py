"""Tests for app.errors and app.responses modules."""

from __future__ import annotations

import json
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.constants import STATE_MIMETYPE
from app.dependencies import ActionFormatError, BundleNotFound, EpisodeTerminated, SessionNotFound
from app.errors import handle_episode_error
from app.responses import json_message, json_payload, state_text


# ---------------------------------------------------------------------------
# handle_episode_error
# ---------------------------------------------------------------------------

class TestHandleEpisodeError:
    def test_unknown_session(self):
        resp = handle_episode_error(SessionNotFound("abc"), log_prefix="test")
        assert resp.status_code == 404
        assert json.loads(resp.get_body())["message"] == "Not found: abc."

    def test_unknown_bundle(self):
        resp = handle_episode_error(BundleNotFound("toy-L1-S0"), log_prefix="test")
        assert resp.status_code == 404

    def test_terminated_episode(self):
        resp = handle_episode_error(EpisodeTerminated("episode already ended (AgentStop)"), log_prefix="test")
        assert resp.status_code == 409
        assert b"AgentStop" in resp.get_body()

    def test_bad_action(self):
        resp = handle_episode_error(ActionFormatError("tool batch is empty"), log_prefix="test")
        assert resp.status_code == 400

    def test_value_error(self):
        resp = handle_episode_error(ValueError("validation failed"), log_prefix="test")
        assert resp.status_code == 400

    def test_unexpected_error(self):
        resp = handle_episode_error(RuntimeError("boom"), log_prefix="test")
        assert resp.status_code == 500
        body = json.loads(resp.get_body())
        assert body["message"] == "Episode request failed."


# ---------------------------------------------------------------------------
# json_message
# ---------------------------------------------------------------------------

class TestJsonMessage:
    def test_returns_correct_status(self):
        resp = json_message("ok", status_code=200)
        assert resp.status_code == 200
        body = json.loads(resp.get_body())
        assert body["message"] == "ok"

    def test_error_status(self):
        resp = json_message("fail", status_code=500)
        assert resp.status_code == 500


# ---------------------------------------------------------------------------
# json_payload / state_text
# ---------------------------------------------------------------------------

class TestJsonPayload:
    def test_default_status(self):
        resp = json_payload({"reward": 1})
        assert resp.status_code == 200
        body = json.loads(resp.get_body())
        assert body["reward"] == 1

    def test_custom_status(self):
        resp = json_payload({"a": 1}, status_code=201)
        assert resp.status_code == 201

    def test_keys_are_sorted(self):
        resp = json_payload({"b": 1, "a": 2})
        assert resp.get_body() == b'{"a": 2, "b": 1}'


class TestStateText:
    def test_plain_text(self):
        resp = state_text("book:\n")
        assert resp.status_code == 200
        assert resp.mimetype == STATE_MIMETYPE
        assert resp.get_body() == b"book:\n"
