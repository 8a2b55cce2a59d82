"""Gated task forging: seed chain, initial state, controlled toolset expansion, distractors, instruction and ground truth."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from core.chains import (
    ChainFormatError,
    ChainProgram,
    ChainRejected,
    chain_context,
    describe_failure,
    execute_chain,
    execute_chains,
    parse_chain,
    sample_seed_chain,
)
from core.dependency_graph import ToolDependencyGraph, dependency_aware_bfs, remaining, structural_complexity
from core.domain_package import DomainPackage
from core.instructions import GroundingViolation, synthesize_instruction
from core.interpreter import ToolOutcome, execute_tool
from core.program_analysis import CONTAINS, CREATE, LOOKUP, MATCH, all_param_roles
from core.prompts import build_messages
from core.provider_service import LLMProvider, ProviderError, ask, extract_decimal, extract_json
from core.schema import RewardSpec, TableSchema, conforms
from core.settings import ForgeSettings
from core.state import EnvState, IntegrityError, diff, instantiate_state, snapshot, state_to_payload
from core.state_synthesis import StateSynthesisFailed, construct_initial_state, inject_distractors
from core.synthetic_values import ValueFactory
from core.task_bundle import TaskBundle, bundle_id_for

logger = logging.getLogger(__name__)

EXPAND = "Expand"
STOP = "Stop"
PROBE_REPAIR_ROUNDS = 5


class ChainFailed(RuntimeError):
    """Raised when a ground-truth chain does not run to completion on the initial state."""


class ForgeFailed(RuntimeError):
    def __init__(self, stage: str, report: str) -> None:
        self.stage = stage
        self.report = report
        super().__init__(f"Forge failed during {stage}: {report}")


@dataclass(frozen=True)
class ExpansionDecision:
    iteration: int
    pool_size: int
    c: float
    g: float
    p: float
    tau: float
    verdict: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iteration": self.iteration,
            "pool_size": self.pool_size,
            "c": round(self.c, 6),
            "g": round(self.g, 6),
            "p": round(self.p, 6),
            "tau": self.tau,
            "verdict": self.verdict,
        }


@dataclass(frozen=True)
class ProbeRecord:
    tool: str
    args: Mapping[str, Any]
    variant: str
    error_name: str = ""
    repairs: int = 0

    def to_dict(self) -> Dict[str, Any]:
        payload = {"tool": self.tool, "args": dict(sorted(self.args.items())), "variant": self.variant, "repairs": self.repairs}
        if self.error_name:
            payload["error_name"] = self.error_name
        return payload


# --------------------------------------------------------------------------- scoring and gating


def feasibility_score(
    provider: LLMProvider,
    graph: ToolDependencyGraph,
    pool: Iterable[str],
    package: DomainPackage,
    k: int,
    seed: int,
    probe_state: EnvState,
    *,
    role: str = "oracle",
) -> float:
    """Fraction of ``k`` oracle attempts that yield a chain inside ``pool`` which fully executes on ``probe_state``."""

    members = sorted(set(pool))
    if not members or k <= 0:
        return 0.0
    context = chain_context(graph, package, members, state=probe_state, step_prefix="o")
    successes = 0
    for attempt in range(k):
        context["attempt"] = attempt
        messages = build_messages(role, context, variables={"domain": package.name})
        try:
            chain = parse_chain(extract_json(ask(provider, role, messages, seed=seed * 1000 + attempt)), package.foundation)
        except ChainFormatError:
            continue
        except ProviderError as exc:
            if exc.kind != "malformed-output":
                raise
            continue
        if not chain.steps or not chain.tool_set() <= set(members):
            continue
        if execute_chain(chain, probe_state, package).completed:
            successes += 1
    return successes / k


def gate_expansion(
    provider: LLMProvider,
    pool_size: int,
    c: float,
    g: float,
    tau: float = 0.5,
    *,
    iteration: int = 0,
    seed: int = 0,
    role: str = "gating",
) -> ExpansionDecision:
    """Ask the gating policy for a compatibility score p; expand iff p >= tau and the pool is nonempty."""

    if c < 0 or not 0.0 <= g <= 1.0:
        raise ValueError(f"Gating needs c >= 0 and g in [0, 1], got c={c}, g={g}.")
    p = 0.0
    if pool_size > 0:
        context = {"pool_size": pool_size, "complexity": c, "feasibility": g, "tau": tau, "iteration": iteration}
        messages = build_messages(role, context)
        p = min(1.0, max(0.0, extract_decimal(ask(provider, role, messages, seed=seed))))
    verdict = EXPAND if p >= tau and pool_size > 0 else STOP
    logger.info("[forge] iteration %s: |D|=%s c=%.3f g=%.3f p=%.3f -> %s", iteration, pool_size, c, g, p, verdict)
    return ExpansionDecision(iteration, pool_size, c, g, p, tau, verdict)


def derive_reward(chains: Sequence[ChainProgram], s0: EnvState, package: DomainPackage) -> Tuple[EnvState, RewardSpec]:
    """Ground-truth state from running ``chains`` on ``s0``, plus the domain's column policies."""

    final, results = execute_chains(chains, s0, package)
    for chain, result in zip(chains, results):
        if not result.completed:
            raise ChainFailed(describe_failure(chain, result))
    return final, package.foundation.reward_policies


# --------------------------------------------------------------------------- interaction probes


def _first_value(state: EnvState, table: str, column: str) -> Any:
    for record in state.records(table):
        if record.get(column) is not None:
            return record[column]
    return None


def _column_value(state: EnvState, name: str, value_type: str) -> Any:
    for table in sorted(state.database.tables, key=lambda item: item.name):
        column = table.column(name)
        if column is None or column.type != value_type:
            continue
        value = _first_value(state, table.name, name)
        if value is not None:
            return value
    return None


def derive_probe_args(
    package: DomainPackage,
    tool_name: str,
    state: EnvState,
    prior_outputs: Mapping[str, Any],
    values: ValueFactory,
) -> Dict[str, Any]:
    """Arguments for one probe call: prior outputs first, else the first matching record field."""

    tool = package.foundation.tool(tool_name)
    roles = all_param_roles({tool_name: package.program(tool_name)}, package.foundation.database).get(tool_name, {})
    args: Dict[str, Any] = {}
    for param in sorted(tool.params, key=lambda item: item.name):
        role = roles.get(param.name)
        list_param = param.type == "list-of-string"
        prior = prior_outputs.get(param.name)
        if prior is not None and conforms(prior, param.type):
            present = role is None or role.op != LOOKUP or all(
                state.get(role.table, key) is not None for key in (prior if list_param else [prior])
            )
            if present and (role is None or role.op != CREATE):
                args[param.name] = prior
                continue
        table = package.foundation.database.table(role.table) if role else None
        if role is not None and role.op == CREATE and table is not None:
            key_type = table.column(role.column).type
            args[param.name] = values.fresh_key(role.column, key_type, set(state.keys(role.table)))
        elif role is not None and role.op == LOOKUP and table is not None:
            keys = state.keys(role.table)
            key_type = "string" if list_param else table.column(role.column).type
            key = keys[0] if keys else values.fresh_key(role.column, key_type, set())
            args[param.name] = [str(key)] if list_param else key
        elif role is not None and role.op in (MATCH, CONTAINS):
            value = _first_value(state, role.table, role.column)
            args[param.name] = [value] if list_param and value is not None else value
            if args[param.name] is None:
                args[param.name] = values.value(param.name, param.type)
        else:
            value = _column_value(state, param.name, param.type)
            args[param.name] = value if value is not None else values.value(param.name, param.type)
    return args


def _placeholder_row(table: TableSchema, key: Any, state: EnvState, values: ValueFactory, depth: int) -> Optional[Dict[str, Any]]:
    row: Dict[str, Any] = {table.primary_key: key}
    for column in table.columns:
        if column.name == table.primary_key:
            continue
        fk = table.foreign_key(column.name)
        if fk is not None:
            parents = state.keys(fk.table)
            if parents:
                row[column.name] = parents[0]
            elif column.nullable:
                row[column.name] = None
            else:
                parent = state.database.table(fk.table)
                if parent is None or depth > len(state.database.tables):
                    return None
                parent_key = values.fresh_key(parent.primary_key, parent.column(parent.primary_key).type, set())
                parent_row = _placeholder_row(parent, parent_key, state, values, depth + 1)
                if parent_row is None:
                    return None
                state.table(parent.name)[parent_key] = parent_row
                row[column.name] = parent_key
        elif column.default is not None:
            row[column.name] = column.default
        elif column.nullable:
            row[column.name] = None
        else:
            row[column.name] = values.value(column.name, column.type)
    return row


def _repair_misses(state: EnvState, misses: Sequence[Tuple[str, Any]], values: ValueFactory) -> Optional[EnvState]:
    """Insert minimal rows (with their parent closure) for every missed key; None when impossible."""

    repaired = state.clone()
    inserted = False
    for table_name, key in misses:
        table = state.database.table(table_name)
        if table is None or key is None or repaired.get(table_name, key) is not None:
            continue
        if not conforms(key, table.column(table.primary_key).type):
            continue
        row = _placeholder_row(table, key, repaired, values, 0)
        if row is None:
            return None
        repaired.table(table_name)[key] = row
        inserted = True
    if not inserted:
        return None
    try:
        return instantiate_state(
            repaired.database,
            state_to_payload(repaired)["tables"],
            repaired.clock,
            clock_step_seconds=repaired.clock_step_seconds,
            id_counters=repaired.id_counters,
        )
    except IntegrityError:
        return None


def probe_toolset(
    package: DomainPackage,
    toolset: Sequence[str],
    state: EnvState,
    chains: Sequence[ChainProgram],
    seed: int,
    *,
    rounds: int = PROBE_REPAIR_ROUNDS,
) -> Tuple[EnvState, List[ProbeRecord]]:
    """Probe every tool with derived arguments, repairing missing entities when the chains allow it."""

    values = ValueFactory(random.Random(f"probe:{package.name}:{seed}"), state.clock)
    baseline = diff(state, execute_chains(chains, state, package)[0]).to_dict()
    current = state
    prior: Dict[str, Any] = {}
    records: List[ProbeRecord] = []
    for tool_name in sorted(toolset):
        tool = package.foundation.tool(tool_name)
        repairs = 0
        while True:
            args = derive_probe_args(package, tool_name, current, prior, values)
            outcome: ToolOutcome = execute_tool(current.clone(), tool, package.program(tool_name), args)
            if not outcome.is_rejection or not outcome.lookup_misses or repairs >= rounds:
                break
            candidate = _repair_misses(current, outcome.lookup_misses, values)
            if candidate is None:
                break
            final, results = execute_chains(chains, candidate, package)
            if not all(result.completed for result in results) or diff(candidate, final).to_dict() != baseline:
                logger.info("[forge] repair for %s would disturb the chains; keeping the rejection", tool_name)
                break
            current = candidate
            repairs += 1
        if outcome.is_failure:
            raise ForgeFailed("probe", f"{tool_name} failed unexpectedly with {outcome.error_name}: {outcome.message}")
        if outcome.is_success:
            for name, value in (outcome.result or {}).items():
                prior.setdefault(name, value)
        records.append(ProbeRecord(tool_name, args, outcome.variant, outcome.error_name, repairs))
    return current, records


# --------------------------------------------------------------------------- the forge loop


@dataclass
class _ForgeRun:
    providers: LLMProvider
    package: DomainPackage
    graph: ToolDependencyGraph
    level: int
    seed: int
    settings: ForgeSettings
    chains: List[ChainProgram] = field(default_factory=list)
    auxiliary: List[ChainProgram] = field(default_factory=list)
    decisions: List[ExpansionDecision] = field(default_factory=list)
    toolset: Set[str] = field(default_factory=set)

    def closure(self, tools: Iterable[str], floor: int) -> Set[str]:
        seeds = set(tools)
        return set(dependency_aware_bfs(self.graph, seeds, max(floor, len(seeds))))

    def sample_with_state(self, pool: Sequence[str], state: EnvState, seed: int, prefix: str) -> Tuple[ChainProgram, EnvState]:
        built: Dict[str, EnvState] = {}

        def probe(chain: ChainProgram) -> Optional[str]:
            try:
                built["state"] = construct_initial_state(
                    self.providers,
                    chain,
                    self.package,
                    seed,
                    state,
                    max_repairs=self.settings.max_repairs,
                    prior_chains=self.chains,
                )
            except StateSynthesisFailed as exc:
                return str(exc)
            return None

        chain = sample_seed_chain(
            self.providers,
            self.graph,
            self.package,
            pool,
            seed,
            state=state,
            probe=probe,
            attempts=self.settings.chain_attempts,
            step_prefix=prefix,
        )
        return chain, built["state"]

    def expand(self, s0: EnvState, tau: float) -> EnvState:
        budget = self.settings.budget_for(self.level)
        for iteration in range(1, self.settings.max_iterations + 1):
            pool = remaining(self.graph, self.toolset)
            c = structural_complexity(self.graph.subgraph(self.toolset)).c
            g = feasibility_score(
                self.providers, self.graph, pool, self.package, self.settings.oracle_k, self.seed * 100 + iteration, s0
            )
            decision = gate_expansion(self.providers, len(pool), c, g, tau, iteration=iteration, seed=self.seed * 100 + iteration)
            self.decisions.append(decision)
            if decision.verdict == STOP:
                break
            try:
                chain, s0 = self.sample_with_state(pool, s0, self.seed * 100 + iteration, f"c{len(self.chains) + 1}")
            except ChainRejected as exc:
                logger.info("[forge] expansion stopped at iteration %s: %s", iteration, exc)
                break
            self.chains.append(chain)
            before = len(self.toolset)
            self.toolset |= self.closure(chain.tool_set(), budget)
            logger.info("[forge] toolset grew from %s to %s", before, len(self.toolset))
        return s0

    def fill_minimum(self, s0: EnvState, target: int) -> None:
        attempt = 0
        while len(self.toolset) < target and attempt < self.settings.auxiliary_attempts:
            pool = remaining(self.graph, self.toolset)
            if not pool:
                break
            attempt += 1

            def runs_on_s0(chain: ChainProgram) -> Optional[str]:
                result = execute_chain(chain, s0, self.package)
                return None if result.completed else describe_failure(chain, result)

            try:
                chain = sample_seed_chain(
                    self.providers,
                    self.graph,
                    self.package,
                    pool,
                    self.seed * 7919 + attempt,
                    state=s0,
                    probe=runs_on_s0,
                    attempts=self.settings.chain_attempts,
                    step_prefix=f"a{attempt}",
                )
            except ChainRejected:
                continue
            self.auxiliary.append(chain)
            self.toolset = self.closure(self.toolset | chain.tool_set(), target)
        if len(self.toolset) < target:
            logger.warning("[forge] toolset holds %s of the %s tools required", len(self.toolset), target)


def _resolved_calls(chains: Sequence[ChainProgram], s0: EnvState, package: DomainPackage) -> List[List[Dict[str, Any]]]:
    calls: List[List[Dict[str, Any]]] = []
    state = s0
    for chain in chains:
        result = execute_chain(chain, state, package)
        calls.append([{"tool": step.tool, "args": dict(sorted(args.items()))} for step, args in zip(chain.steps, result.resolved_args)])
        state = result.final_state
    return calls


def forge_task(
    providers: LLMProvider,
    package: DomainPackage,
    graph: ToolDependencyGraph,
    level: int,
    seed: int,
    settings: Optional[ForgeSettings] = None,
    *,
    tau: Optional[float] = None,
) -> TaskBundle:
    """Forge one verifiable task for ``package`` at complexity ``level``."""

    settings = settings or ForgeSettings()
    tau = settings.tau if tau is None else tau
    run = _ForgeRun(providers, package, graph, level, seed, settings)
    base = package.base_state(settings.clock_start, settings.clock_step_seconds)
    target = min(settings.min_toolset, len(graph.nodes))
    logger.info("[forge] %s level %s seed %s: target toolset %s", package.name, level, seed, target)

    try:
        first, s0 = run.sample_with_state(graph.nodes, base, seed, "c1")
    except ChainRejected as exc:
        raise ForgeFailed("seed-chain", str(exc)) from exc
    run.chains.append(first)
    run.toolset = run.closure(first.tool_set(), settings.budget_for(level))

    s0 = run.expand(s0, tau)
    run.fill_minimum(s0, target)

    try:
        s0, distractors = inject_distractors(s0, run.chains, level, seed, package, attempts=settings.distractor_attempts)
    except ValueError as exc:
        raise ForgeFailed("distractors", str(exc)) from exc

    toolset = tuple(name for name in graph.nodes if name in run.toolset)
    s0, probes = probe_toolset(package, toolset, s0, run.chains, seed)

    try:
        s_gt, reward_spec = derive_reward(run.chains, s0, package)
    except ChainFailed as exc:
        raise ForgeFailed("ground-truth", str(exc)) from exc

    try:
        intent, profile = synthesize_instruction(
            providers, run.chains, s0, package, seed=seed, retries=settings.instruction_retries
        )
    except GroundingViolation as exc:
        raise ForgeFailed("instruction", str(exc)) from exc

    provenance = {
        "seed": seed,
        "level": level,
        "tau": tau,
        "target_toolset": target,
        "expansion_budget": settings.budget_for(level),
        "shortfall": max(0, target - len(toolset)),
        "chains": [chain.to_dict() for chain in run.chains],
        "resolved_calls": _resolved_calls(run.chains, s0, package),
        "auxiliary_chains": [chain.to_dict() for chain in run.auxiliary],
        "iterations": [decision.to_dict() for decision in run.decisions],
        "distractors": distractors.to_dict(),
        "probes": [record.to_dict() for record in probes],
    }
    logger.info("[forge] forged %s with %s tool(s) and %s chain(s)", bundle_id_for(package.name, level, seed), len(toolset), len(run.chains))
    return TaskBundle(
        bundle_id=bundle_id_for(package.name, level, seed),
        package=package,
        toolset=toolset,
        initial_state=snapshot(s0),
        ground_truth=snapshot(s_gt),
        intent=intent,
        profile=profile,
        reward_spec=reward_spec,
        level=level,
        seed=seed,
        provenance=provenance,
    )


__all__ = [
    "ChainFailed",
    "EXPAND",
    "ExpansionDecision",
    "ForgeFailed",
    "ProbeRecord",
    "STOP",
    "derive_probe_args",
    "derive_reward",
    "feasibility_score",
    "forge_task",
    "gate_expansion",
    "probe_toolset",
]
