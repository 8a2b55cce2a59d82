"""Tests for core.agents module."""

from __future__ import annotations

import json
import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from core.agents import ProviderAgent, ProviderUser, ReplayAgent, ScriptedAgent, ScriptedUser, user_from_payload
from core.episode import (
    DONE_SENTINEL,
    STOP_SENTINEL,
    AgentError,
    AgentView,
    Message,
    Respond,
    ToolBatch,
    ToolCall,
    UserError,
    start_episode,
)
from core.provider_service import ProviderError
from providers.mock import MockProvider, scripted


def _view(toy_bundle):
    return start_episode(toy_bundle, ScriptedUser(["hi"])).view()


def test_scripted_agent_finishes_after_its_actions():
    agent = ScriptedAgent.from_payload([{"respond": "one moment"}])
    view = AgentView(tools=(), messages=())

    assert agent.act(view) == Respond("one moment")
    assert DONE_SENTINEL in agent.act(view).text


def test_scripted_agent_rejects_bad_payload():
    with pytest.raises(AgentError):
        ScriptedAgent.from_payload([{"dance": True}])


def test_replay_agent_uses_resolved_calls(toy_bundle):
    agent = ReplayAgent(toy_bundle)
    view = _view(toy_bundle)

    first = agent.act(view)

    assert first == ToolBatch((ToolCall("lend_book", {"book_id": "BK001", "borrower_name": "Sam Okafor"}),))
    assert DONE_SENTINEL in agent.act(view).text


def test_provider_agent_parses_tool_calls(toy_bundle):
    reply = json.dumps({"tool_calls": [{"tool": "get_book", "args": {"book_id": "BK001"}}]})
    agent = ProviderAgent(MockProvider(scripts={"agent": scripted([reply])}), domain="toy_library")

    assert agent.act(_view(toy_bundle)) == ToolBatch((ToolCall("get_book", {"book_id": "BK001"}),))


def test_provider_agent_treats_plain_text_as_response(toy_bundle):
    agent = ProviderAgent(MockProvider(scripts={"agent": scripted(["Which book would you like?"])}))

    assert agent.act(_view(toy_bundle)) == Respond("Which book would you like?")


def test_provider_agent_rejects_invalid_actions(toy_bundle):
    agent = ProviderAgent(MockProvider(scripts={"agent": scripted([json.dumps({"tool_calls": []})])}))

    with pytest.raises(AgentError):
        agent.act(_view(toy_bundle))


def test_provider_agent_wraps_provider_errors(toy_bundle):
    def unavailable(request):
        raise ProviderError("unavailable", "down")

    agent = ProviderAgent(MockProvider(scripts={"agent": unavailable}))

    with pytest.raises(AgentError):
        agent.act(_view(toy_bundle))


def test_provider_agent_history_hides_system_prompt(toy_bundle):
    seen = {}

    def capture(request):
        seen["messages"] = request.messages
        return json.dumps({"respond": "done " + DONE_SENTINEL})

    view = AgentView(
        tools=(),
        messages=(
            Message("system", "secret system text"),
            Message("assistant", "", (ToolCall("get_book", {"book_id": "BK001"}),)),
            Message("tool", '{"title": "The Dispossessed"}'),
        ),
    )

    ProviderAgent(MockProvider(scripts={"agent": capture})).act(view)

    contents = [message.content for message in seen["messages"][1:]]
    assert "secret system text" not in contents
    assert 'Tool result: {"title": "The Dispossessed"}' in contents
    assert any('"tool_calls"' in content for content in contents)


def test_scripted_user_stops_when_out_of_replies():
    user = ScriptedUser(["hello"])

    assert user.reply("intent", {}, ()) == "hello"
    assert STOP_SENTINEL in user.reply("intent", {}, ())


def test_mock_user_walks_through_the_intent(toy_bundle):
    user = ProviderUser(MockProvider())
    history = [Message("assistant", "Hi! How can I help you today?")]

    opening = user.reply(toy_bundle.intent, toy_bundle.profile, history)

    assert opening.startswith("Hi! I need help with the following:")
    assert "My name is Sam Okafor." in opening
    assert toy_bundle.intent not in opening

    history += [Message("user", opening), Message("assistant", "I have completed the loan.")]
    assert STOP_SENTINEL in user.reply(toy_bundle.intent, toy_bundle.profile, history)


def test_provider_user_wraps_provider_errors():
    def unavailable(request):
        raise ProviderError("unavailable", "down")

    with pytest.raises(UserError):
        ProviderUser(MockProvider(scripts={"user_simulator": unavailable})).reply("x", {}, ())


def test_user_from_payload():
    provider = MockProvider()

    assert isinstance(user_from_payload({"scripted": ["hi"]}, provider), ScriptedUser)
    assert isinstance(user_from_payload(None, provider), ProviderUser)
    with pytest.raises(ValueError):
        user_from_payload({"scripted": "hi"}, provider)
