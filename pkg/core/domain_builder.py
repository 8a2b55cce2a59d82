"""Domain synthesis: schema agent, code agent, test agent and the debug loop, producing a validated package."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from core.domain_format import domain_from_payload, table_to_payload, tool_to_payload
from core.domain_package import DomainPackage, build_package
from core.effect_language import EffectProgram, EffectSemanticError, EffectSyntaxError, parse_effect_program
from core.procedural_testing import (
    CaseFormatError,
    FixtureError,
    ProceduralTestCase,
    cases_from_payload,
    debug_loop,
    run_procedural_test,
    strip_fences,
    validate_case,
)
from core.prompts import build_messages
from core.provider_service import LLMProvider, ProviderError, ask, extract_json
from core.schema import DomainFoundation, DomainValidationError, TableSchema, ToolSchema, derive_mapping

logger = logging.getLogger(__name__)

TOOL_KINDS = ("create", "get", "list", "update", "delete")


class DomainSynthesisError(RuntimeError):
    """Raised when the schema agent cannot produce a usable foundation."""

    def __init__(self, stage: str, problems: Sequence[str]) -> None:
        self.stage = stage
        self.problems = list(problems)
        super().__init__(f"{stage}: " + "; ".join(self.problems[:5]))


@dataclass
class DomainBuildReport:
    """What happened to each tool on its way into the package."""

    written: List[str] = field(default_factory=list)
    repaired: List[str] = field(default_factory=list)
    dropped: Dict[str, List[str]] = field(default_factory=dict)
    cases: int = 0
    discarded_cases: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "written": sorted(self.written),
            "repaired": sorted(self.repaired),
            "dropped": {name: list(problems) for name, problems in sorted(self.dropped.items())},
            "cases": self.cases,
            "discarded_cases": sorted(self.discarded_cases),
        }


def tool_kind(tool: ToolSchema) -> str:
    head = tool.name.split("_", 1)[0]
    return head if head in TOOL_KINDS else "custom"


def primary_table(tool: ToolSchema, foundation: DomainFoundation) -> Optional[TableSchema]:
    """The table a tool is named after (longest table name found in the tool name)."""

    matches = [table for table in foundation.database.tables if table.name in tool.name]
    return max(matches, key=lambda table: len(table.name)) if matches else None


def _children(table: TableSchema, foundation: DomainFoundation) -> List[Dict[str, str]]:
    return [
        {"table": other.name, "column": fk.column}
        for other in foundation.database.tables
        for fk in other.foreign_keys
        if fk.table == table.name
    ]


def _tool_context(tool: ToolSchema, foundation: DomainFoundation) -> Dict[str, Any]:
    table = primary_table(tool, foundation)
    return {
        "tool": tool_to_payload(tool),
        "kind": tool_kind(tool),
        "table": table_to_payload(table) if table else {},
        "children": _children(table, foundation) if table else [],
        "tables": [table_to_payload(item) for item in foundation.database.tables],
    }


def design_schema(
    provider: LLMProvider,
    domain_name: str,
    description: str,
    entities: Sequence[str],
    *,
    seed: int = 0,
    attempts: int = 3,
) -> DomainFoundation:
    """Ask the schema agent for a foundation; the mapping is re-derived from programs later."""

    feedback: List[str] = []
    for attempt in range(attempts):
        context = {"domain_name": domain_name, "description": description, "entities": list(entities), "feedback": feedback[-5:]}
        try:
            payload = extract_json(ask(provider, "schema_agent", build_messages("schema_agent", context), seed=seed + attempt))
            if isinstance(payload, dict):
                payload = dict(payload, mapping={})
            return domain_from_payload(payload)
        except ProviderError as exc:
            if exc.kind != "malformed-output":
                raise
            feedback.append(str(exc))
        except DomainValidationError as exc:
            feedback.extend(exc.violations)
        logger.info("[domain_builder] schema attempt %s rejected", attempt + 1)
    raise DomainSynthesisError("schema", feedback or ["schema agent produced nothing usable"])


def write_program(
    provider: LLMProvider,
    tool: ToolSchema,
    foundation: DomainFoundation,
    *,
    seed: int = 0,
    attempts: int = 3,
) -> Tuple[Optional[EffectProgram], List[str]]:
    """Ask the code agent for ``tool``'s program until it parses; returns the program or the problems."""

    context = _tool_context(tool, foundation)
    problems: List[str] = []
    for attempt in range(attempts):
        if problems:
            context["feedback"] = problems[-3:]
        text = strip_fences(ask(provider, "code_agent", build_messages("code_agent", context), seed=seed + attempt))
        try:
            return parse_effect_program(text, tool, foundation.database), problems
        except EffectSyntaxError as exc:
            problems.append(str(exc))
        except EffectSemanticError as exc:
            problems.extend(exc.problems)
    return None, problems


def write_cases(
    provider: LLMProvider,
    tool: ToolSchema,
    foundation: DomainFoundation,
    *,
    seed: int = 0,
) -> Tuple[List[ProceduralTestCase], List[str]]:
    """Test-agent cases for ``tool``; unusable cases are returned as discard notes."""

    context = _tool_context(tool, foundation)
    try:
        payload = extract_json(ask(provider, "test_agent", build_messages("test_agent", context), seed=seed))
        cases = cases_from_payload(payload)
    except (ProviderError, CaseFormatError) as exc:
        return [], [f"{tool.name}: {exc}"]
    kept, discarded = [], []
    for case in cases:
        problems = validate_case(foundation, case)
        if problems or case.tool != tool.name:
            discarded.append(f"{case.name}: " + ("; ".join(problems) or "targets another tool"))
        else:
            kept.append(case)
    return kept, discarded


def _verify(foundation: DomainFoundation, program: EffectProgram, cases: Sequence[ProceduralTestCase]) -> Tuple[List[ProceduralTestCase], List[str], List[str]]:
    runnable, discarded, failures = [], [], []
    for case in cases:
        try:
            verdict = run_procedural_test(foundation, {case.tool: program}, case)
        except FixtureError as exc:
            discarded.append(str(exc))
            continue
        runnable.append(case)
        if not verdict.passed:
            failures.extend(verdict.mismatches)
    return runnable, discarded, failures


def synthesize_domain(
    provider: LLMProvider,
    domain_name: str,
    description: str,
    entities: Sequence[str],
    *,
    seed: int = 0,
    max_retries: int = 3,
    seed_records: Optional[Mapping[str, Sequence[Mapping[str, Any]]]] = None,
) -> Tuple[DomainPackage, DomainBuildReport]:
    """Build a complete domain package; tools whose programs cannot be made to pass are dropped."""

    foundation = design_schema(provider, domain_name, description, entities, seed=seed)
    report = DomainBuildReport()
    programs: Dict[str, EffectProgram] = {}
    all_cases: List[ProceduralTestCase] = []

    for index, tool in enumerate(sorted(foundation.tools, key=lambda item: item.name)):
        tool_seed = seed * 1000 + index * 10
        program, problems = write_program(provider, tool, foundation, seed=tool_seed, attempts=max_retries)
        if program is None:
            report.dropped[tool.name] = problems
            continue
        report.written.append(tool.name)

        cases, discarded = write_cases(provider, tool, foundation, seed=tool_seed)
        report.discarded_cases.extend(discarded)
        cases, discarded, failures = _verify(foundation, program, cases)
        report.discarded_cases.extend(discarded)
        if failures:
            outcome = debug_loop(provider, foundation, tool.name, program, cases, max_retries=max_retries, seed=tool_seed)
            if outcome.gave_up:
                report.dropped[tool.name] = list(outcome.report)
                continue
            program = outcome.program
            report.repaired.append(tool.name)
        programs[tool.name] = program
        all_cases.extend(cases)

    if not programs:
        raise DomainSynthesisError("programs", [f"{name}: {'; '.join(p[:2])}" for name, p in sorted(report.dropped.items())])

    kept_tools = tuple(tool for tool in foundation.tools if tool.name in programs)
    foundation = replace(foundation, tools=kept_tools)
    foundation = replace(foundation, mapping=derive_mapping(programs.values(), foundation.database))
    report.cases = len(all_cases)
    package = build_package(
        foundation,
        {name: program.source for name, program in programs.items()},
        seed_records or {},
        all_cases,
    )
    logger.info(
        "[domain_builder] %s: %s tool(s) kept, %s repaired, %s dropped",
        domain_name,
        len(programs),
        len(report.repaired),
        len(report.dropped),
    )
    return package, report


__all__ = [
    "DomainBuildReport",
    "DomainSynthesisError",
    "TOOL_KINDS",
    "design_schema",
    "primary_table",
    "synthesize_domain",
    "tool_kind",
    "write_cases",
    "write_program",
]
