"""Agent and user implementations: scripted, replayed from a bundle, and provider-backed."""

from __future__ import annotations

import json
import logging
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

from core.episode import (
    ASSISTANT,
    DONE_SENTINEL,
    STOP_SENTINEL,
    SYSTEM,
    TOOL,
    USER,
    Action,
    ActionFormatError,
    AgentError,
    AgentView,
    Message,
    Respond,
    ToolBatch,
    ToolCall,
    UserError,
    action_from_payload,
    action_to_payload,
)
from core.prompts import build_messages
from core.provider_service import ChatMessage, LLMProvider, ProviderError, ask, extract_json
from core.task_bundle import TaskBundle

logger = logging.getLogger(__name__)


class ScriptedAgent:
    """Plays a fixed list of actions, then declares the task done."""

    def __init__(self, actions: Iterable[Action]) -> None:
        self._actions: List[Action] = list(actions)
        self._position = 0

    @classmethod
    def from_payload(cls, payload: Sequence[Mapping[str, Any]]) -> "ScriptedAgent":
        try:
            return cls(action_from_payload(dict(item)) for item in payload)
        except (TypeError, ValueError) as exc:
            raise AgentError(f"invalid scripted action: {exc}") from exc

    def act(self, view: AgentView) -> Action:
        if self._position >= len(self._actions):
            return Respond(f"Everything is taken care of. {DONE_SENTINEL}")
        action = self._actions[self._position]
        self._position += 1
        return action


class ReplayAgent(ScriptedAgent):
    """Replays the ground-truth calls recorded in a bundle, one batch per chain."""

    def __init__(self, bundle: TaskBundle) -> None:
        batches = [
            ToolBatch(tuple(ToolCall(str(call["tool"]), dict(call.get("args") or {})) for call in calls))
            for calls in bundle.resolved_calls()
            if calls
        ]
        super().__init__(batches)


def _agent_history(messages: Sequence[Message]) -> List[ChatMessage]:
    history = []
    for message in messages:
        if message.role == SYSTEM:
            continue
        if message.role == TOOL:
            history.append(ChatMessage(USER, f"Tool result: {message.content}"))
        elif message.role == ASSISTANT and message.tool_calls:
            batch = action_to_payload(ToolBatch(message.tool_calls))
            history.append(ChatMessage(ASSISTANT, json.dumps(batch, sort_keys=True, ensure_ascii=False)))
        else:
            history.append(ChatMessage(message.role, message.content))
    return history


class ProviderAgent:
    """Asks the ``agent`` role for the next action; plain text answers become responses."""

    def __init__(self, provider: LLMProvider, *, domain: str = "", seed: int = 0, role: str = "agent") -> None:
        self.provider = provider
        self.domain = domain
        self.seed = seed
        self.role = role

    def act(self, view: AgentView) -> Action:
        tools = json.dumps(list(view.tools), sort_keys=True, indent=2, ensure_ascii=False)
        messages = build_messages(
            self.role,
            {"tools": sorted(str(tool.get("name")) for tool in view.tools)},
            variables={"domain": self.domain or "support", "tools": tools},
            history=_agent_history(view.messages),
        )
        try:
            text = ask(self.provider, self.role, messages, seed=self.seed)
        except ProviderError as exc:
            raise AgentError(str(exc)) from exc
        try:
            payload = extract_json(text)
        except ProviderError:
            return Respond(text)
        try:
            return action_from_payload(payload)
        except ActionFormatError as exc:
            raise AgentError(f"agent produced an invalid action: {exc}") from exc


class ScriptedUser:
    """Returns canned replies in order, then stops the conversation."""

    def __init__(self, replies: Iterable[str]) -> None:
        self._replies = list(replies)
        self._position = 0

    def reply(self, intent: str, profile: Mapping[str, Any], history: Sequence[Message]) -> str:
        if self._position >= len(self._replies):
            return f"Thank you. {STOP_SENTINEL}"
        text = self._replies[self._position]
        self._position += 1
        return text


class ProviderUser:
    """Simulated customer driven by the ``user_simulator`` role; it alone sees the intent."""

    def __init__(self, provider: LLMProvider, *, seed: int = 0, role: str = "user_simulator") -> None:
        self.provider = provider
        self.seed = seed
        self.role = role

    def reply(self, intent: str, profile: Mapping[str, Any], history: Sequence[Message]) -> str:
        last_assistant = next((m.content for m in reversed(history) if m.role == ASSISTANT and not m.tool_calls), "")
        context: Dict[str, Any] = {
            "intent": intent,
            "profile": dict(profile),
            "user_turns": sum(1 for message in history if message.role == USER),
            "last_assistant": last_assistant,
        }
        try:
            return ask(self.provider, self.role, build_messages(self.role, context), seed=self.seed).strip()
        except ProviderError as exc:
            raise UserError(str(exc)) from exc


def user_from_payload(payload: Optional[Mapping[str, Any]], provider: LLMProvider, *, seed: int = 0):
    """``{"scripted": [replies]}`` builds a :class:`ScriptedUser`; anything else falls back to the provider."""

    if payload and "scripted" in payload:
        replies = payload["scripted"]
        if not isinstance(replies, list) or not all(isinstance(item, str) for item in replies):
            raise ValueError("'scripted' must be a list of strings")
        return ScriptedUser(replies)
    return ProviderUser(provider, seed=seed)


__all__ = [
    "ProviderAgent",
    "ProviderUser",
    "ReplayAgent",
    "ScriptedAgent",
    "ScriptedUser",
    "user_from_payload",
]
