"""Tests for app.routes.episodes module."""

from __future__ import annotations

import json
import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app import dependencies
from app.routes import episodes as episode_routes
from core import provider_service
from core.agents import ReplayAgent, ScriptedUser
from core.episode import EpisodeConfig, run_episode
from core.provider_service import ProviderBundle
from core.sessions import SessionService
from providers.mock import MockProvider


def _fn(builder):
    """Extract the user function from an Azure Functions FunctionBuilder."""
    return builder._function.get_user_function()


class FakeReq:
    def __init__(self, body=None, route_params=None, raw=None):
        self.params = {}
        self.headers = {}
        self.route_params = route_params or {}
        self._body = body
        self._raw = raw

    def get_json(self):
        if self._raw is not None:
            raise ValueError("invalid json")
        return self._body


def _body(resp):
    return json.loads(resp.get_body())


@pytest.fixture()
def served(toy_bundle, monkeypatch):
    service = SessionService()
    monkeypatch.setattr(episode_routes, "get_session_service", lambda: service)
    monkeypatch.setattr(episode_routes, "get_episode_config", lambda: EpisodeConfig())
    dependencies.set_bundle_registry({toy_bundle.bundle_id: toy_bundle})
    provider_service.set_provider_bundle(ProviderBundle(default=MockProvider()))
    yield service
    dependencies.set_bundle_registry(None)
    provider_service.set_provider_bundle(None)


def _open(bundle_id="toy_library-L1-S0", replies=("Please lend me BK001.",)):
    return _fn(episode_routes.create_episode)(FakeReq({"bundle_id": bundle_id, "user": {"scripted": list(replies)}}))


def _step(session_id, action):
    return _fn(episode_routes.step_episode)(FakeReq({"action": action}, {"session_id": session_id}))


# ---------------------------------------------------------------------------
# create_episode
# ---------------------------------------------------------------------------

class TestCreateEpisode:
    def test_opens_session(self, served, toy_bundle):
        resp = _open()

        assert resp.status_code == 201
        body = _body(resp)
        assert body["terminated"] is False
        assert [spec["name"] for spec in body["tool_specs"]] == list(toy_bundle.toolset)
        assert [message["role"] for message in body["messages"]] == ["assistant", "user"]
        assert body["messages"][1]["content"] == "Please lend me BK001."
        assert toy_bundle.intent not in body["system_message"]
        assert served.repository.ids() == [body["session_id"]]

    def test_unknown_bundle_is_404(self, served):
        assert _open("nope-L1-S0").status_code == 404

    def test_invalid_json_is_400(self, served):
        resp = _fn(episode_routes.create_episode)(FakeReq(raw="{"))

        assert resp.status_code == 400

    def test_bad_user_override_is_400(self, served):
        resp = _fn(episode_routes.create_episode)(FakeReq({"bundle_id": "toy_library-L1-S0", "user": {"scripted": "hi"}}))

        assert resp.status_code == 400

    def test_default_user_is_simulated(self, served):
        resp = _fn(episode_routes.create_episode)(FakeReq({"bundle_id": "toy_library-L1-S0"}))

        assert resp.status_code == 201
        assert _body(resp)["messages"][1]["content"].startswith("Hi! I need help with the following:")


# ---------------------------------------------------------------------------
# step_episode
# ---------------------------------------------------------------------------

class TestStepEpisode:
    def test_tool_batch_and_response(self, served):
        session_id = _body(_open(replies=("hi", "thanks")))["session_id"]

        resp = _step(session_id, {"tool_calls": [{"tool": "get_book", "args": {"book_id": "BK404"}}]})
        assert resp.status_code == 200
        assert _body(resp)["observation"]["kind"] == "ToolResults"
        assert _body(resp)["observation"]["results"][0].startswith("NotFound: ")

        resp = _step(session_id, {"respond": "Which book?"})
        assert _body(resp)["observation"] == {"kind": "UserReply", "text": "thanks"}
        assert _body(resp)["terminated"] is False

    def test_step_after_termination_is_409(self, served):
        session_id = _body(_open())["session_id"]

        done = _step(session_id, {"respond": "Finished ###DONE###"})
        assert _body(done)["stop_reason"] == "AgentStop"

        assert _step(session_id, {"respond": "hello?"}).status_code == 409

    def test_malformed_action_is_400(self, served):
        session_id = _body(_open())["session_id"]

        assert _step(session_id, {"tool_calls": []}).status_code == 400
        resp = _fn(episode_routes.step_episode)(FakeReq({"nothing": 1}, {"session_id": session_id}))
        assert resp.status_code == 400

    def test_unknown_session_is_404(self, served):
        assert _step("missing", {"respond": "hi"}).status_code == 404


# ---------------------------------------------------------------------------
# state, evaluate, delete and bundle listing
# ---------------------------------------------------------------------------

class TestEpisodeLifecycle:
    def test_http_matches_in_process_episode(self, served, toy_bundle):
        expected = run_episode(toy_bundle, ReplayAgent(toy_bundle), ScriptedUser(["Please lend me BK001."]))
        session_id = _body(_open())["session_id"]
        route = {"session_id": session_id}

        for calls in toy_bundle.resolved_calls():
            _step(session_id, {"tool_calls": calls})
        _step(session_id, {"respond": "Everything is taken care of. ###DONE###"})

        state = _fn(episode_routes.episode_state)(FakeReq(route_params=route))
        assert state.get_body().decode("utf-8") == expected.final_state

        evaluation = _body(_fn(episode_routes.evaluate_episode_route)(FakeReq(route_params=route)))
        assert evaluation["reward"] == expected.reward == 1
        assert evaluation["stop_reason"] == expected.stop_reason
        assert evaluation["turns"] == 0

    def test_delete_closes_session(self, served):
        route = {"session_id": _body(_open())["session_id"]}

        assert _fn(episode_routes.delete_episode)(FakeReq(route_params=route)).status_code == 204
        assert _fn(episode_routes.delete_episode)(FakeReq(route_params=route)).status_code == 404
        assert _fn(episode_routes.evaluate_episode_route)(FakeReq(route_params=route)).status_code == 404

    def test_list_bundles(self, served, toy_bundle):
        resp = _fn(episode_routes.list_bundles)(FakeReq())

        assert _body(resp) == {"bundles": [toy_bundle.bundle_id]}
