"""A validated domain: foundation, parsed effect programs, seed records and procedural cases."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence

from core.effect_language import EffectProgram, EffectSemanticError, EffectSyntaxError, parse_effect_program
from core.procedural_testing import ProceduralTestCase, validate_case
from core.schema import DomainFoundation, DomainValidationError, UnknownTableError, derive_mapping, mapping_mismatches
from core.state import DEFAULT_CLOCK_START, DEFAULT_CLOCK_STEP_SECONDS, EnvState, instantiate_state

logger = logging.getLogger(__name__)

RecordSet = Mapping[str, Sequence[Mapping[str, Any]]]


@dataclass(frozen=True)
class DomainPackage:
    """Everything needed to instantiate environments for one domain."""

    foundation: DomainFoundation
    programs: Mapping[str, EffectProgram]
    seed_records: RecordSet = field(default_factory=dict)
    cases: Sequence[ProceduralTestCase] = ()

    @property
    def name(self) -> str:
        return self.foundation.domain_name

    def program(self, tool: str) -> EffectProgram:
        return self.programs[tool]

    def base_state(
        self,
        clock_start: str = DEFAULT_CLOCK_START,
        clock_step_seconds: int = DEFAULT_CLOCK_STEP_SECONDS,
    ) -> EnvState:
        """Fresh state holding the seed records."""

        return instantiate_state(
            self.foundation.database,
            self.seed_records,
            clock_start,
            clock_step_seconds=clock_step_seconds,
        )


def parse_programs(foundation: DomainFoundation, program_texts: Mapping[str, str]) -> tuple[Dict[str, EffectProgram], List[str]]:
    """Parse every program text; problems are prefixed with the tool name."""

    programs: Dict[str, EffectProgram] = {}
    problems: List[str] = []
    known = set(foundation.tool_names)
    for name in sorted(known - set(program_texts)):
        problems.append(f"tool '{name}' has no effect program")
    for name in sorted(set(program_texts) - known):
        problems.append(f"effect program '{name}' does not match a declared tool")
    for name in sorted(known & set(program_texts)):
        tool = foundation.tool(name)
        assert tool is not None
        try:
            programs[name] = parse_effect_program(program_texts[name], tool, foundation.database)
        except EffectSyntaxError as exc:
            problems.append(f"{name}: {exc}")
        except EffectSemanticError as exc:
            problems.extend(f"{name}: {problem}" for problem in exc.problems)
    return programs, problems


def generated_key_problems(foundation: DomainFoundation, programs: Mapping[str, EffectProgram]) -> List[str]:
    """Primary keys filled by ``gen_id`` must carry the Exempt policy."""

    problems: List[str] = []
    seen = set()
    for name in sorted(programs):
        for table_name, column in sorted(programs[name].generated_columns()):
            table = foundation.database.table(table_name)
            if table is None or column != table.primary_key or (table_name, column) in seen:
                continue
            seen.add((table_name, column))
            policy = foundation.reward_policies.policy(table_name, column)
            if policy != "Exempt":
                problems.append(f"generated key '{table_name}.{column}' must be Exempt, found {policy}")
    return problems


def build_package(
    foundation: DomainFoundation,
    program_texts: Mapping[str, str],
    seed_records: Optional[RecordSet] = None,
    cases: Sequence[ProceduralTestCase] = (),
) -> DomainPackage:
    """Parse and cross-check a domain, raising one :class:`DomainValidationError` with every problem."""

    programs, problems = parse_programs(foundation, program_texts)
    if len(programs) == len(foundation.tools):
        try:
            derived = derive_mapping(programs.values(), foundation.database)
        except UnknownTableError as exc:
            problems.append(str(exc))
        else:
            problems.extend(mapping_mismatches(foundation.mapping, derived))
    problems.extend(generated_key_problems(foundation, programs))
    for case in cases:
        problems.extend(validate_case(foundation, case))
    if problems:
        logger.warning("[domain] %s failed validation with %s problem(s)", foundation.domain_name, len(problems))
        raise DomainValidationError(problems)
    return DomainPackage(
        foundation=foundation,
        programs=dict(sorted(programs.items())),
        seed_records=dict(seed_records or {}),
        cases=tuple(cases),
    )


__all__ = ["DomainPackage", "RecordSet", "build_package", "generated_key_problems", "parse_programs"]
