"""Seed tool chains: parsing, execution and provider-driven sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from core.dependency_graph import DATA_FLOW, ToolDependencyGraph
from core.domain_format import tool_to_payload
from core.domain_package import DomainPackage
from core.interpreter import ToolOutcome, execute_tool
from core.program_analysis import all_param_roles
from core.prompts import build_messages
from core.provider_service import LLMProvider, ProviderError, ask, extract_json
from core.schema import DomainFoundation
from core.state import EnvState

logger = logging.getLogger(__name__)

MAX_CHAIN_STEPS = 8
MIN_CHAIN_STEPS = 2
REF_KEY = "$ref"

Probe = Callable[["ChainProgram"], Optional[str]]


class ChainFormatError(ValueError):
    """Raised when a chain document is malformed or references unknown tools, steps or fields."""

    def __init__(self, problems: Sequence[str]) -> None:
        self.problems = list(problems)
        super().__init__("Invalid chain: " + "; ".join(self.problems))


class ChainRejected(RuntimeError):
    """Raised when no acceptable chain was proposed within the attempt budget."""

    def __init__(self, attempts: Sequence[str]) -> None:
        self.attempts = list(attempts)
        super().__init__(f"No usable chain after {len(self.attempts)} attempt(s): " + " | ".join(self.attempts))


@dataclass(frozen=True)
class ChainRef:
    """Argument bound to a return field of an earlier step."""

    step: str
    field: str

    def to_dict(self) -> Dict[str, str]:
        return {REF_KEY: f"{self.step}.{self.field}"}


@dataclass(frozen=True)
class ChainStep:
    id: str
    tool: str
    args: Mapping[str, Any] = field(default_factory=dict)

    def literal_args(self) -> Dict[str, Any]:
        return {name: value for name, value in self.args.items() if not isinstance(value, ChainRef)}

    def to_dict(self) -> Dict[str, Any]:
        args = {
            name: value.to_dict() if isinstance(value, ChainRef) else value
            for name, value in sorted(self.args.items())
        }
        return {"id": self.id, "tool": self.tool, "args": args}


@dataclass(frozen=True)
class ChainProgram:
    steps: Tuple[ChainStep, ...]
    purpose: str = ""

    @property
    def tools(self) -> Tuple[str, ...]:
        return tuple(step.tool for step in self.steps)

    def tool_set(self) -> Set[str]:
        return set(self.tools)

    def to_dict(self) -> Dict[str, Any]:
        return {"purpose": self.purpose, "steps": [step.to_dict() for step in self.steps]}


@dataclass
class ChainResult:
    """Outcome of running a chain; ``completed`` is True only when every step succeeded."""

    final_state: EnvState
    outcomes: List[ToolOutcome]
    resolved_args: List[Dict[str, Any]]
    completed: bool

    @property
    def failed_step(self) -> Optional[int]:
        return None if self.completed else len(self.outcomes) - 1


def _parse_ref(value: Any) -> Optional[Tuple[str, str]]:
    if isinstance(value, dict) and set(value) == {REF_KEY} and isinstance(value[REF_KEY], str):
        step, _, name = value[REF_KEY].partition(".")
        return step, name
    return None


def parse_chain(payload: Any, foundation: DomainFoundation) -> ChainProgram:
    """Validate a chain document against ``foundation`` and build a :class:`ChainProgram`."""

    if not isinstance(payload, dict) or not isinstance(payload.get("steps"), list):
        raise ChainFormatError(["chain must be an object with a 'steps' list"])

    problems: List[str] = []
    steps: List[ChainStep] = []
    seen: Dict[str, str] = {}
    for position, raw in enumerate(payload["steps"], start=1):
        if not isinstance(raw, dict):
            problems.append(f"step {position} is not an object")
            continue
        step_id = str(raw.get("id") or f"s{position}")
        tool_name = raw.get("tool")
        tool = foundation.tool(str(tool_name)) if tool_name else None
        if tool is None:
            problems.append(f"step {step_id} uses unknown tool {tool_name!r}")
            continue
        if step_id in seen:
            problems.append(f"step id {step_id} repeats")
            continue
        raw_args = raw.get("args") or {}
        if not isinstance(raw_args, dict):
            problems.append(f"step {step_id} args must be an object")
            continue
        args: Dict[str, Any] = {}
        for name, value in raw_args.items():
            if tool.param(name) is None:
                problems.append(f"step {step_id} passes undeclared parameter '{name}' to {tool.name}")
                continue
            ref = _parse_ref(value)
            if ref is None:
                args[name] = value
                continue
            source_step, source_field = ref
            source_tool = seen.get(source_step)
            if source_tool is None:
                problems.append(f"step {step_id} refers to {source_step}, which is not an earlier step")
            elif foundation.tool(source_tool).return_field(source_field) is None:
                problems.append(f"step {step_id} refers to {source_step}.{source_field}, which {source_tool} does not return")
            else:
                args[name] = ChainRef(source_step, source_field)
        seen[step_id] = tool.name
        steps.append(ChainStep(step_id, tool.name, args))

    if problems:
        raise ChainFormatError(problems)
    return ChainProgram(steps=tuple(steps), purpose=str(payload.get("purpose") or ""))


def execute_chain(chain: ChainProgram, state: EnvState, package: DomainPackage) -> ChainResult:
    """Run ``chain`` on a copy of ``state``, stopping at the first non-Success (committed steps stand)."""

    working = state.clone()
    outcomes: List[ToolOutcome] = []
    resolved: List[Dict[str, Any]] = []
    results: Dict[str, Dict[str, Any]] = {}
    for step in chain.steps:
        args = {
            name: results.get(value.step, {}).get(value.field) if isinstance(value, ChainRef) else value
            for name, value in step.args.items()
        }
        resolved.append(args)
        outcome = execute_tool(working, package.foundation.tool(step.tool), package.program(step.tool), args)
        outcomes.append(outcome)
        if not outcome.is_success:
            logger.debug("[chain] step %s (%s) ended with %s", step.id, step.tool, outcome.variant)
            return ChainResult(working, outcomes, resolved, completed=False)
        results[step.id] = dict(outcome.result or {})
    return ChainResult(working, outcomes, resolved, completed=True)


def execute_chains(chains: Iterable[ChainProgram], state: EnvState, package: DomainPackage) -> Tuple[EnvState, List[ChainResult]]:
    """Run chains in order, each on the previous chain's final state."""

    current = state
    results: List[ChainResult] = []
    for chain in chains:
        result = execute_chain(chain, current, package)
        results.append(result)
        if not result.completed:
            break
        current = result.final_state
    return current, results


def describe_failure(chain: ChainProgram, result: ChainResult) -> str:
    index = result.failed_step
    if index is None:
        return ""
    step = chain.steps[index]
    outcome = result.outcomes[index]
    return f"step {step.id} ({step.tool}) ended with {outcome.variant} {outcome.error_name}: {outcome.message}".strip()


def known_values(state: Optional[EnvState]) -> Dict[str, List[Any]]:
    """Column values present in ``state`` as ``{"table.column": [...]}``."""

    if state is None:
        return {}
    values: Dict[str, List[Any]] = {}
    for table in state.database.tables:
        for record in state.records(table.name):
            for column in table.columns:
                value = record.get(column.name)
                if value is None:
                    continue
                bucket = values.setdefault(f"{table.name}.{column.name}", [])
                if value not in bucket:
                    bucket.append(value)
    return dict(sorted(values.items()))


def chain_context(
    graph: ToolDependencyGraph,
    package: DomainPackage,
    pool: Sequence[str],
    *,
    state: Optional[EnvState],
    step_prefix: str,
    avoid: Iterable[str] = (),
) -> Dict[str, Any]:
    members = sorted(set(pool))
    roles = all_param_roles({name: package.program(name) for name in members}, package.foundation.database)
    local = graph.subgraph(members)
    return {
        "tools": [tool_to_payload(package.foundation.tool(name)) for name in members],
        "data_flow": [list(edge) for edge in local.edges_with(DATA_FLOW)],
        "neighbors": [list(edge) for edge in sorted(local.edges)],
        "param_hints": {tool: {param: role.to_dict() for param, role in params.items()} for tool, params in roles.items()},
        "known_values": known_values(state),
        "step_prefix": step_prefix,
        "min_steps": min(MIN_CHAIN_STEPS, len(members)),
        "max_steps": MAX_CHAIN_STEPS,
        "clock": state.clock if state is not None else None,
        "avoid": sorted(set(avoid)),
    }


def sample_seed_chain(
    provider: LLMProvider,
    graph: ToolDependencyGraph,
    package: DomainPackage,
    pool: Iterable[str],
    seed: int,
    *,
    state: Optional[EnvState] = None,
    probe: Optional[Probe] = None,
    attempts: int = 5,
    step_prefix: str = "c1",
    role: str = "chain_proposer",
) -> ChainProgram:
    """Ask ``provider`` for a chain over ``pool``; each attempt must parse, stay in the pool and pass ``probe``."""

    members = sorted(set(pool))
    if not members:
        raise ValueError("Cannot sample a chain from an empty tool pool.")
    min_steps = min(MIN_CHAIN_STEPS, len(members))
    failures: List[str] = []
    avoid: Set[str] = set()
    for attempt in range(attempts):
        context = chain_context(graph, package, members, state=state, step_prefix=step_prefix, avoid=avoid)
        context["attempt"] = attempt
        messages = build_messages(role, context, variables={"domain": package.name})
        try:
            chain = parse_chain(extract_json(ask(provider, role, messages, seed=seed * 1000 + attempt)), package.foundation)
        except (ChainFormatError, ProviderError) as exc:
            failures.append(f"attempt {attempt}: {exc}")
            continue

        outside = sorted(chain.tool_set() - set(members))
        if outside:
            failures.append(f"attempt {attempt}: tools outside the pool {outside}")
            avoid.update(outside)
            continue
        if not min_steps <= len(chain.steps) <= MAX_CHAIN_STEPS:
            failures.append(f"attempt {attempt}: {len(chain.steps)} step(s), expected {min_steps}..{MAX_CHAIN_STEPS}")
            continue
        problem = probe(chain) if probe is not None else None
        if problem:
            failures.append(f"attempt {attempt}: {problem}")
            avoid.update(chain.tools[-1:])
            continue
        logger.info("[chain] accepted %s-step chain %s after %s attempt(s)", len(chain.steps), list(chain.tools), attempt + 1)
        return chain

    logger.warning("[chain] rejected pool of %s tool(s) after %s attempt(s)", len(members), attempts)
    raise ChainRejected(failures)


def chain_from_dict(payload: Mapping[str, Any], foundation: DomainFoundation) -> ChainProgram:
    return parse_chain(dict(payload), foundation)


__all__ = [
    "ChainFormatError",
    "ChainProgram",
    "ChainRef",
    "ChainRejected",
    "ChainResult",
    "ChainStep",
    "MAX_CHAIN_STEPS",
    "chain_context",
    "chain_from_dict",
    "describe_failure",
    "execute_chain",
    "execute_chains",
    "known_values",
    "parse_chain",
    "sample_seed_chain",
]
