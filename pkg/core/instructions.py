"""User-intent synthesis with a grounding check against the initial state and chain literals."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from core.chains import ChainProgram
from core.domain_package import DomainPackage
from core.program_analysis import LOOKUP, all_param_roles
from core.prompts import build_messages
from core.provider_service import LLMProvider, ProviderError, ask, extract_json
from core.state import EnvState

logger = logging.getLogger(__name__)

QUOTED = "quoted"
IDENTIFIER = "identifier"
DATE = "date"
NUMBER = "number"

_QUOTED_RE = re.compile(r'"([^"\n]+)"')
_IDENTIFIER_RE = re.compile(r"\b[A-Z][A-Za-z]*[-_]?\d[A-Za-z0-9_-]*\b")
_DATE_RE = re.compile(r"\b\d{4}-\d{2}-\d{2}(?: \d{2}:\d{2}:\d{2})?\b")
_NUMBER_RE = re.compile(r"(?<![\w.])-?\d+(?:\.\d+)?(?!\w)")
_LABEL_SUFFIXES = ("title", "name")
NUMBER_TOLERANCE = 1e-9


class GroundingViolation(ValueError):
    """Raised when every instruction attempt mentioned literals found neither in the state nor the chains."""

    def __init__(self, literals: Sequence[str]) -> None:
        self.literals = list(literals)
        super().__init__(f"Instruction mentions ungrounded literals: {self.literals}")


@dataclass(frozen=True)
class Literal:
    kind: str
    text: str


def scan_literals(text: str) -> List[Literal]:
    """Quoted strings, then identifiers, dates and numbers; each match is removed before the next scan."""

    found: List[Literal] = []
    remaining = text
    for kind, pattern in ((QUOTED, _QUOTED_RE), (IDENTIFIER, _IDENTIFIER_RE), (DATE, _DATE_RE), (NUMBER, _NUMBER_RE)):
        for match in pattern.finditer(remaining):
            value = match.group(1) if kind == QUOTED else match.group(0)
            found.append(Literal(kind, value.strip()))
        remaining = pattern.sub(" ", remaining)
    return found


@dataclass(frozen=True)
class GroundingIndex:
    strings: Tuple[str, ...]
    numbers: Tuple[float, ...]
    tokens: frozenset

    @classmethod
    def build(cls, values: Iterable[Any]) -> "GroundingIndex":
        strings: Set[str] = set()
        numbers: Set[float] = set()
        for value in values:
            for item in value if isinstance(value, (list, tuple)) else [value]:
                if isinstance(item, bool) or item is None:
                    continue
                if isinstance(item, (int, float)):
                    numbers.add(float(item))
                else:
                    strings.add(str(item).strip().lower())
        tokens = frozenset(token for text in strings for token in re.findall(r"-?\d+(?:\.\d+)?", text))
        return cls(tuple(sorted(strings)), tuple(sorted(numbers)), tokens)

    def contains_text(self, literal: str) -> bool:
        needle = literal.lower()
        return any(needle == text or needle in text for text in self.strings)

    def contains_number(self, literal: str) -> bool:
        try:
            value = float(literal)
        except ValueError:
            return False
        if any(abs(value - number) <= NUMBER_TOLERANCE for number in self.numbers):
            return True
        return literal in self.tokens


def ungrounded_literals(text: str, index: GroundingIndex) -> List[str]:
    missing: List[str] = []
    for literal in scan_literals(text):
        grounded = index.contains_number(literal.text) if literal.kind == NUMBER else index.contains_text(literal.text)
        if not grounded and literal.text not in missing:
            missing.append(literal.text)
    return missing


def _state_values(state: EnvState) -> List[Any]:
    return [value for table in state.database.tables for record in state.records(table.name) for value in record.values()]


def _chain_literals(chains: Sequence[ChainProgram]) -> List[Any]:
    return [value for chain in chains for step in chain.steps for value in step.literal_args().values()]


def grounding_index(chains: Sequence[ChainProgram], state: EnvState) -> GroundingIndex:
    return GroundingIndex.build(_state_values(state) + _chain_literals(chains))


def _label(state: EnvState, table: str, key: Any) -> Optional[str]:
    schema = state.database.table(table)
    record = state.get(table, key)
    if schema is None or record is None:
        return None
    for column in schema.columns:
        if column.name == schema.primary_key or schema.foreign_key(column.name) is not None:
            continue
        if column.type == "string" and column.name.endswith(_LABEL_SUFFIXES) and record.get(column.name):
            return str(record[column.name])
    return None


def entities(chains: Sequence[ChainProgram], state: EnvState, package: DomainPackage) -> List[Dict[str, Any]]:
    """Records the user must point at: literal lookup arguments, in chain order."""

    roles = all_param_roles(package.programs, package.foundation.database)
    found: List[Dict[str, Any]] = []
    for chain in chains:
        for step in chain.steps:
            for name, value in sorted(step.literal_args().items()):
                role = roles.get(step.tool, {}).get(name)
                if role is None or role.op != LOOKUP:
                    continue
                for key in value if isinstance(value, list) else [value]:
                    entry = {"table": role.table, "key": key, "label": _label(state, role.table, key)}
                    if entry not in found:
                        found.append(entry)
    return found


def profile_hint(found: Sequence[Mapping[str, Any]], state: EnvState) -> Dict[str, Any]:
    name = None
    if found:
        first = found[0]
        record = state.get(first["table"], first["key"]) or {}
        name = next(
            (record[column] for column in sorted(record) if column.endswith("_name") and isinstance(record[column], str)),
            None,
        )
    known: List[Any] = []
    for entry in found:
        if entry["key"] not in known:
            known.append(entry["key"])
    return {"name": name, "known_ids": known}


def _steps_payload(chains: Sequence[ChainProgram], package: DomainPackage) -> List[Dict[str, Any]]:
    steps = []
    for chain in chains:
        for step in chain.steps:
            payload = step.to_dict()
            payload["description"] = package.foundation.tool(step.tool).description
            steps.append(payload)
    return steps


def synthesize_instruction(
    provider: LLMProvider,
    chains: Sequence[ChainProgram],
    state: EnvState,
    package: DomainPackage,
    *,
    seed: int = 0,
    retries: int = 3,
    role: str = "instruction_writer",
) -> Tuple[str, Dict[str, Any]]:
    """Return ``(intent, profile)`` whose intent mentions only literals grounded in ``state`` or the chains."""

    index = grounding_index(chains, state)
    found = entities(chains, state, package)
    hint = profile_hint(found, state)
    context: Dict[str, Any] = {
        "purpose": "; ".join(chain.purpose for chain in chains if chain.purpose),
        "steps": _steps_payload(chains, package),
        "entities": found,
        "profile_hint": hint,
    }
    last: List[str] = []
    for attempt in range(retries):
        context["attempt"] = attempt
        context["ungrounded"] = last
        messages = build_messages(role, context, variables={"domain": package.name})
        try:
            reply = extract_json(ask(provider, role, messages, seed=seed * 1000 + attempt))
        except ProviderError as exc:
            logger.info("[instruction] attempt %s returned no JSON: %s", attempt, exc)
            last = []
            continue
        intent = str(reply.get("intent", "")).strip() if isinstance(reply, dict) else ""
        if not intent:
            continue
        last = ungrounded_literals(intent, index)
        if last:
            logger.info("[instruction] attempt %s mentions ungrounded literals %s", attempt, last)
            continue
        profile = dict(reply.get("profile") or {}) if isinstance(reply.get("profile"), dict) else {}
        profile["name"] = profile.get("name") or hint["name"]
        known = list(profile.get("known_ids") or [])
        profile["known_ids"] = known + [key for key in hint["known_ids"] if key not in known]
        return intent, profile

    raise GroundingViolation(last or ["<no usable instruction>"])


__all__ = [
    "GroundingIndex",
    "GroundingViolation",
    "Literal",
    "entities",
    "grounding_index",
    "profile_hint",
    "scan_literals",
    "synthesize_instruction",
    "ungrounded_literals",
]
