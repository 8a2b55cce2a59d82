"""Multi-turn agent/user episodes over a task bundle, group rollouts and group-relative advantages."""

from __future__ import annotations

import json
import logging
import statistics
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

from core.domain_format import tool_to_payload
from core.interpreter import execute_tool
from core.reward import EvalReport, evaluate
from core.settings import EpisodeSettings
from core.state import EnvState, canonical_serialize
from core.task_bundle import TaskBundle

logger = logging.getLogger(__name__)

SYSTEM = "system"
USER = "user"
ASSISTANT = "assistant"
TOOL = "tool"

GREETING = "Hi! How can I help you today?"
STOP_SENTINEL = "###STOP###"
DONE_SENTINEL = "###DONE###"

USER_STOP = "UserStop"
AGENT_STOP = "AgentStop"
MAX_TURNS = "MaxTurns"
ERROR = "Error"

USER_REPLY = "UserReply"
TOOL_RESULTS = "ToolResults"
TERMINAL = "Terminal"


class EpisodeTerminated(RuntimeError):
    """Raised when an action is sent to an episode that already ended."""


class ActionFormatError(ValueError):
    """Raised when an action document is neither a response nor a nonempty tool batch."""


class AgentError(RuntimeError):
    pass


class UserError(RuntimeError):
    pass


class EmptyGroup(ValueError):
    """Raised when advantages are requested for an empty reward list."""


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"tool": self.tool, "args": dict(sorted(self.args.items()))}


@dataclass(frozen=True)
class Message:
    role: str
    content: str
    tool_calls: Tuple[ToolCall, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_calls:
            payload["tool_calls"] = [call.to_dict() for call in self.tool_calls]
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "Message":
        calls = tuple(ToolCall(str(item["tool"]), dict(item.get("args") or {})) for item in payload.get("tool_calls", []))
        return cls(str(payload["role"]), str(payload.get("content", "")), calls)


@dataclass(frozen=True)
class Respond:
    text: str


@dataclass(frozen=True)
class ToolBatch:
    calls: Tuple[ToolCall, ...]


Action = Respond | ToolBatch


def action_from_payload(payload: Any) -> Action:
    """``{"respond": text}`` or ``{"tool_calls": [{"tool": name, "args": {...}}, ...]}``."""

    if not isinstance(payload, dict):
        raise ActionFormatError("action must be an object")
    if ("respond" in payload) == ("tool_calls" in payload):
        raise ActionFormatError("action must carry exactly one of 'respond' or 'tool_calls'")
    if "respond" in payload:
        if not isinstance(payload["respond"], str):
            raise ActionFormatError("'respond' must be text")
        return Respond(payload["respond"])
    calls = payload["tool_calls"]
    if not isinstance(calls, list) or not calls:
        raise ActionFormatError("'tool_calls' must be a nonempty list")
    parsed = []
    for index, item in enumerate(calls):
        if not isinstance(item, dict) or not isinstance(item.get("tool"), str):
            raise ActionFormatError(f"tool call {index} must be an object with a 'tool' name")
        args = item.get("args", {})
        if not isinstance(args, dict):
            raise ActionFormatError(f"tool call {index} args must be an object")
        parsed.append(ToolCall(item["tool"], args))
    return ToolBatch(tuple(parsed))


def action_to_payload(action: Action) -> Dict[str, Any]:
    if isinstance(action, Respond):
        return {"respond": action.text}
    return {"tool_calls": [call.to_dict() for call in action.calls]}


@dataclass(frozen=True)
class Observation:
    kind: str
    text: str = ""
    results: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"kind": self.kind}
        if self.kind == TOOL_RESULTS:
            payload["results"] = list(self.results)
        else:
            payload["text"] = self.text
        return payload


@dataclass(frozen=True)
class AgentView:
    """Everything an agent may see: the toolset and the visible conversation."""

    tools: Tuple[Mapping[str, Any], ...]
    messages: Tuple[Message, ...]


class Agent(Protocol):
    def act(self, view: AgentView) -> Action:
        """Choose the next action."""


class User(Protocol):
    def reply(self, intent: str, profile: Mapping[str, Any], history: Sequence[Message]) -> str:
        """Answer the assistant's latest message."""


@dataclass
class EpisodeConfig:
    max_turns: int = 40
    max_actions: int = 400

    @classmethod
    def from_settings(cls, settings: EpisodeSettings) -> "EpisodeConfig":
        return cls(max_turns=settings.max_turns, max_actions=settings.max_actions)


@dataclass
class EpisodeState:
    """One running episode; the environment changes only through successful tool calls."""

    bundle: TaskBundle
    env: EnvState
    user: User
    config: EpisodeConfig
    history: List[Message] = field(default_factory=list)
    turn: int = 0
    actions: int = 0
    terminated: bool = False
    stop_reason: Optional[str] = None
    seed: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def intent(self) -> str:
        return self.bundle.intent

    def view(self) -> AgentView:
        return AgentView(tools=tuple(tool_specs(self.bundle)), messages=tuple(self.history))

    def terminate(self, reason: str) -> None:
        self.terminated = True
        self.stop_reason = reason


def tool_specs(bundle: TaskBundle) -> List[Dict[str, Any]]:
    return [tool_to_payload(tool) for tool in bundle.tools()]


def system_message(bundle: TaskBundle) -> str:
    tools = json.dumps(tool_specs(bundle), sort_keys=True, indent=2, ensure_ascii=False)
    return (
        "You are a customer-service assistant with access to the tools below. "
        "Call tools to read or change the database, and respond to the user in plain text. "
        f"When the request is fully handled, include {DONE_SENTINEL} in your response.\n\n"
        f"Tools:\n{tools}"
    )


def _ask_user(state: EpisodeState) -> str:
    try:
        reply = state.user.reply(state.bundle.intent, state.bundle.profile, tuple(state.history))
    except Exception as exc:
        raise UserError(str(exc)) from exc
    if not isinstance(reply, str):
        raise UserError("user reply must be text")
    return reply


def start_episode(bundle: TaskBundle, user: User, config: Optional[EpisodeConfig] = None, *, seed: int = 0) -> EpisodeState:
    """Fresh environment from the bundle, a system message, the greeting and the user's first message."""

    state = EpisodeState(bundle=bundle, env=bundle.fresh_state(), user=user, config=config or EpisodeConfig(), seed=seed)
    state.history.append(Message(SYSTEM, system_message(bundle)))
    state.history.append(Message(ASSISTANT, GREETING))
    opening = _ask_user(state)
    state.history.append(Message(USER, opening))
    if STOP_SENTINEL in opening:
        state.terminate(USER_STOP)
    return state


def step(state: EpisodeState, action: Action) -> Observation:
    """Apply one agent action; only Respond advances the turn counter."""

    if state.terminated:
        raise EpisodeTerminated(f"episode already ended ({state.stop_reason})")

    if isinstance(action, ToolBatch):
        if not action.calls:
            raise ActionFormatError("tool batch is empty")
        state.history.append(Message(ASSISTANT, "", action.calls))
        allowed = set(state.bundle.toolset)
        results = []
        for call in action.calls:
            if call.tool not in allowed:
                text = f"UnknownTool: no tool named '{call.tool}' is available."
            else:
                package = state.bundle.package
                outcome = execute_tool(state.env, package.foundation.tool(call.tool), package.program(call.tool), dict(call.args))
                text = outcome.render()
            state.history.append(Message(TOOL, text))
            results.append(text)
        state.actions += len(action.calls)
        if state.actions >= state.config.max_actions:
            state.terminate(MAX_TURNS)
        return Observation(TOOL_RESULTS, results=tuple(results))

    state.history.append(Message(ASSISTANT, action.text))
    if DONE_SENTINEL in action.text:
        state.terminate(AGENT_STOP)
        return Observation(TERMINAL, text=action.text)
    state.turn += 1
    if state.turn >= state.config.max_turns:
        state.terminate(MAX_TURNS)
        return Observation(TERMINAL)
    reply = _ask_user(state)
    state.history.append(Message(USER, reply))
    if STOP_SENTINEL in reply:
        state.terminate(USER_STOP)
        return Observation(TERMINAL, text=reply)
    return Observation(USER_REPLY, text=reply)


def evaluate_episode(state: EpisodeState) -> EvalReport:
    return evaluate(state.env, state.bundle.ground_truth_state(), state.bundle.reward_spec)


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    seed: int
    messages: Tuple[Message, ...]
    final_state: str
    reward: int
    turns: int
    stop_reason: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "seed": self.seed,
            "messages": [message.to_dict() for message in self.messages],
            "reward": self.reward,
            "turns": self.turns,
            "stop_reason": self.stop_reason,
        }


def _trajectory(state: EpisodeState, reward: int) -> Trajectory:
    return Trajectory(
        task_id=state.bundle.bundle_id,
        seed=state.seed,
        messages=tuple(state.history),
        final_state=canonical_serialize(state.env),
        reward=reward,
        turns=state.turn,
        stop_reason=state.stop_reason or ERROR,
    )


def run_episode(bundle: TaskBundle, agent: Agent, user: User, config: Optional[EpisodeConfig] = None, *, seed: int = 0) -> Trajectory:
    """Drive ``agent`` until the episode ends; the reward is computed once, at termination."""

    config = config or EpisodeConfig()
    try:
        state = start_episode(bundle, user, config, seed=seed)
    except UserError as exc:
        logger.warning("[episode] %s seed %s: user failed before the first turn: %s", bundle.bundle_id, seed, exc)
        return Trajectory(bundle.bundle_id, seed, (), canonical_serialize(bundle.fresh_state()), 0, 0, ERROR)

    while not state.terminated:
        try:
            action = agent.act(state.view())
        except Exception as exc:
            logger.warning("[episode] %s seed %s: agent failed: %s", bundle.bundle_id, seed, exc)
            state.terminate(ERROR)
            break
        try:
            step(state, action)
        except (UserError, ActionFormatError) as exc:
            logger.warning("[episode] %s seed %s: %s", bundle.bundle_id, seed, exc)
            state.terminate(ERROR)

    reward = 0 if state.stop_reason == ERROR else evaluate_episode(state).reward
    logger.info("[episode] %s seed %s ended with %s after %s turn(s), reward %s", bundle.bundle_id, seed, state.stop_reason, state.turn, reward)
    return _trajectory(state, reward)


def rollout_group(
    bundle: TaskBundle,
    agent_factory: Callable[[int], Agent],
    user_factory: Callable[[int], User],
    group_size: int,
    seeds: Optional[Sequence[int]] = None,
    config: Optional[EpisodeConfig] = None,
    *,
    workers: int = 4,
) -> List[Trajectory]:
    """``group_size`` independent episodes from identical initial states, ordered by seed index."""

    if group_size < 1:
        raise ValueError("Group size must be at least 1.")
    seeds = list(seeds) if seeds is not None else list(range(group_size))
    if len(seeds) != group_size:
        raise ValueError(f"Expected {group_size} seed(s), got {len(seeds)}.")

    def one(seed: int) -> Trajectory:
        try:
            return run_episode(bundle, agent_factory(seed), user_factory(seed), config, seed=seed)
        except Exception:
            logger.exception("[episode] %s seed %s crashed", bundle.bundle_id, seed)
            return Trajectory(bundle.bundle_id, seed, (), canonical_serialize(bundle.fresh_state()), 0, 0, ERROR)

    with ThreadPoolExecutor(max_workers=max(1, min(workers, group_size))) as pool:
        return list(pool.map(one, seeds))


def compute_group_advantages(rewards: Sequence[float]) -> List[float]:
    """(r - mean) / population std; all zeros when the std is zero."""

    if not rewards:
        raise EmptyGroup("Cannot compute advantages for an empty group.")
    values = [float(item) for item in rewards]
    mean = statistics.fmean(values)
    sigma = statistics.pstdev(values, mu=mean)
    if sigma == 0:
        return [0.0 for _ in values]
    return [(value - mean) / sigma for value in values]


__all__ = [
    "AGENT_STOP",
    "Action",
    "ActionFormatError",
    "Agent",
    "AgentError",
    "AgentView",
    "DONE_SENTINEL",
    "ERROR",
    "EmptyGroup",
    "EpisodeConfig",
    "EpisodeState",
    "EpisodeTerminated",
    "GREETING",
    "MAX_TURNS",
    "Message",
    "Observation",
    "Respond",
    "STOP_SENTINEL",
    "TERMINAL",
    "TOOL_RESULTS",
    "ToolBatch",
    "ToolCall",
    "Trajectory",
    "USER_REPLY",
    "USER_STOP",
    "User",
    "action_from_payload",
    "action_to_payload",
    "compute_group_advantages",
    "evaluate_episode",
    "rollout_group",
    "run_episode",
    "start_episode",
    "step",
    "system_message",
    "tool_specs",
]
