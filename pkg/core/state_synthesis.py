"""Initial-state construction for seed chains and distractor injection."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from core.chains import ChainProgram, describe_failure, execute_chains
from core.domain_format import table_to_payload
from core.domain_package import DomainPackage
from core.program_analysis import CONTAINS, CREATE, LOOKUP, MATCH, all_param_roles
from core.prompts import build_messages
from core.provider_service import LLMProvider, ProviderError, ask, extract_json
from core.schema import TableSchema
from core.state import EnvState, IntegrityError, StateDiff, diff, instantiate_state, state_to_payload
from core.synthetic_values import ValueFactory

logger = logging.getLogger(__name__)

DISTRACTOR_COUNTS: Dict[int, int] = {1: 3, 2: 8, 3: 15}
DISTRACTOR_ATTEMPTS = 100


class StateSynthesisFailed(RuntimeError):
    """Raised when no state supporting the chain was built within the repair budget."""

    def __init__(self, report: Sequence[str]) -> None:
        self.report = list(report)
        super().__init__("Could not build a state for the chain: " + " | ".join(self.report[-3:]))


class DistractorConflict(RuntimeError):
    """Raised in strict mode when distractor candidates keep disturbing the chains."""

    def __init__(self, table: str, attempts: int) -> None:
        self.table = table
        self.attempts = attempts
        super().__init__(f"Distractors for '{table}' disturbed the ground-truth chains {attempts} time(s).")


@dataclass(frozen=True)
class DistractorReport:
    added: Mapping[str, int] = field(default_factory=dict)
    shortfall: Mapping[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"added": dict(sorted(self.added.items())), "shortfall": dict(sorted(self.shortfall.items()))}


def _as_items(value: Any) -> List[Any]:
    return list(value) if isinstance(value, list) else [value]


def chain_requirements(chains: Iterable[ChainProgram], package: DomainPackage) -> Tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
    """Records the chains' literal arguments expect to find, and keys they expect to be free."""

    roles = all_param_roles(package.programs, package.foundation.database)
    requirements: List[Dict[str, Any]] = []
    forbidden: List[Dict[str, Any]] = []
    for chain in chains:
        for step in chain.steps:
            for name, value in sorted(step.literal_args().items()):
                role = roles.get(step.tool, {}).get(name)
                if role is None or value is None:
                    continue
                for item in _as_items(value):
                    if role.op == LOOKUP:
                        entry = {"kind": "lookup", "table": role.table, "key": item}
                    elif role.op in (MATCH, CONTAINS):
                        entry = {"kind": role.op, "table": role.table, "column": role.column, "value": item}
                    elif role.op == CREATE:
                        entry = {"table": role.table, "key": item}
                        if entry not in forbidden:
                            forbidden.append(entry)
                        continue
                    else:
                        continue
                    if entry not in requirements:
                        requirements.append(entry)
    return requirements, forbidden


def referenced_keys(chains: Iterable[ChainProgram], package: DomainPackage) -> Dict[str, Set[Any]]:
    """Keys named by chain literals, per table."""

    requirements, forbidden = chain_requirements(chains, package)
    keys: Dict[str, Set[Any]] = {}
    for entry in requirements + forbidden:
        if "key" in entry:
            keys.setdefault(entry["table"], set()).add(entry["key"])
    return keys


def _merge_records(base: EnvState, additions: Mapping[str, Any]) -> Dict[str, List[Dict[str, Any]]]:
    merged = {name: list(rows) for name, rows in state_to_payload(base)["tables"].items()}
    for table, rows in sorted(additions.items()):
        if not isinstance(rows, list):
            raise ValueError(f"records for '{table}' must be a list")
        merged.setdefault(table, []).extend(rows)
    return merged


def construct_initial_state(
    provider: LLMProvider,
    chain: ChainProgram,
    package: DomainPackage,
    seed: int,
    base_state: EnvState,
    *,
    max_repairs: int = 5,
    prior_chains: Sequence[ChainProgram] = (),
    role: str = "state_builder",
) -> EnvState:
    """Extend ``base_state`` until ``prior_chains`` followed by ``chain`` all run to completion."""

    chains = list(prior_chains) + [chain]
    requirements, forbidden = chain_requirements([chain], package)
    clashes = [entry for entry in forbidden if base_state.get(entry["table"], entry["key"]) is not None]
    if clashes:
        raise StateSynthesisFailed([f"chain creates keys that already exist: {clashes}"])

    database = package.foundation.database
    feedback: List[str] = []
    for attempt in range(max_repairs + 1):
        context = {
            "attempt": attempt,
            "tables": [table_to_payload(table) for table in sorted(database.tables, key=lambda item: item.name)],
            "requirements": requirements,
            "forbidden": forbidden,
            "existing_keys": {name: base_state.keys(name) for name in database.table_names},
            "clock": base_state.clock,
            "chain": chain.to_dict(),
            "feedback": feedback[-3:],
        }
        messages = build_messages(role, context, variables={"domain": package.name})
        try:
            reply = extract_json(ask(provider, role, messages, seed=seed * 1000 + attempt))
            additions = reply.get("records", {}) if isinstance(reply, dict) else {}
            candidate = instantiate_state(
                database,
                _merge_records(base_state, additions),
                base_state.clock,
                clock_step_seconds=base_state.clock_step_seconds,
                id_counters=base_state.id_counters,
            )
        except IntegrityError as exc:
            feedback.append(f"attempt {attempt}: " + "; ".join(str(item) for item in exc.violations[:10]))
            continue
        except (ProviderError, ValueError) as exc:
            feedback.append(f"attempt {attempt}: {exc}")
            continue

        _, results = execute_chains(chains, candidate, package)
        if results and all(result.completed for result in results) and len(results) == len(chains):
            logger.info("[state] built initial state for %s-step chain in %s attempt(s)", len(chain.steps), attempt + 1)
            return candidate
        failed = next(index for index, result in enumerate(results) if not result.completed)
        misses = results[failed].outcomes[-1].lookup_misses
        detail = describe_failure(chains[failed], results[failed])
        if misses:
            detail += f"; missing records: {[list(miss) for miss in misses]}"
        feedback.append(f"attempt {attempt}: {detail}")

    logger.warning("[state] giving up after %s attempt(s)", max_repairs + 1)
    raise StateSynthesisFailed(feedback)


def _ground_truth_diff(state: EnvState, chains: Sequence[ChainProgram], package: DomainPackage) -> Optional[StateDiff]:
    final, results = execute_chains(chains, state, package)
    if len(results) != len(chains) or not all(result.completed for result in results):
        return None
    return diff(state, final)


def _distractor_row(
    table: TableSchema,
    state: EnvState,
    values: ValueFactory,
    rng: random.Random,
    reserved: Mapping[str, Set[Any]],
) -> Optional[Dict[str, Any]]:
    key_type = table.column(table.primary_key).type
    taken = set(state.keys(table.name)) | set(reserved.get(table.name, set()))
    row: Dict[str, Any] = {table.primary_key: values.fresh_key(table.primary_key, key_type, taken)}
    for column in table.columns:
        if column.name == table.primary_key:
            continue
        fk = table.foreign_key(column.name)
        if fk is not None:
            parents = state.keys(fk.table)
            if not parents:
                if not column.nullable:
                    return None
                row[column.name] = None
                continue
            outside = [key for key in parents if key not in reserved.get(fk.table, set())]
            row[column.name] = rng.choice(outside or parents)
            continue
        row[column.name] = values.value(column.name, column.type)
    return row


def inject_distractors(
    state: EnvState,
    chains: Sequence[ChainProgram],
    level: int,
    seed: int,
    package: DomainPackage,
    *,
    attempts: int = DISTRACTOR_ATTEMPTS,
    strict: bool = False,
) -> Tuple[EnvState, DistractorReport]:
    """Add records the chains never touch; the chains' diff must stay exactly the same."""

    if level not in DISTRACTOR_COUNTS:
        raise ValueError(f"Complexity level must be one of {sorted(DISTRACTOR_COUNTS)}, got {level}.")
    baseline = _ground_truth_diff(state, chains, package)
    if baseline is None:
        raise ValueError("Distractors need a state on which every chain succeeds.")
    expected = baseline.to_dict()

    mapping = package.foundation.mapping
    touched = sorted({table for chain in chains for tool in chain.tools for table in mapping.tables_touched(tool)})
    reserved = referenced_keys(chains, package)
    for table, keys in baseline.touched_keys().items():
        reserved.setdefault(table, set()).update(keys)

    rng = random.Random(f"distractors:{package.name}:{seed}:{level}")
    values = ValueFactory(rng, state.clock)
    current = state.clone()
    target = DISTRACTOR_COUNTS[level]
    added: Dict[str, int] = {}
    shortfall: Dict[str, int] = {}
    for table_name in touched:
        table = package.foundation.database.table(table_name)
        count = 0
        rejected = 0
        while count < target and rejected < attempts:
            row = _distractor_row(table, current, values, rng, reserved)
            if row is None:
                break
            candidate = current.clone()
            candidate.table(table_name)[row[table.primary_key]] = dict(row)
            try:
                candidate = instantiate_state(
                    candidate.database,
                    state_to_payload(candidate)["tables"],
                    candidate.clock,
                    clock_step_seconds=candidate.clock_step_seconds,
                    id_counters=candidate.id_counters,
                )
            except IntegrityError:
                rejected += 1
                continue
            check = _ground_truth_diff(candidate, chains, package)
            if check is None or check.to_dict() != expected:
                rejected += 1
                continue
            current = candidate
            count += 1
        added[table_name] = count
        if count < target:
            if strict and rejected >= attempts:
                raise DistractorConflict(table_name, rejected)
            shortfall[table_name] = target - count
            logger.warning("[distractors] %s: added %s of %s record(s)", table_name, count, target)
    logger.info("[distractors] level %s added %s record(s) across %s table(s)", level, sum(added.values()), len(touched))
    return current, DistractorReport(added=added, shortfall=shortfall)


__all__ = [
    "DISTRACTOR_COUNTS",
    "DistractorConflict",
    "DistractorReport",
    "StateSynthesisFailed",
    "chain_requirements",
    "construct_initial_state",
    "inject_distractors",
    "referenced_keys",
]
