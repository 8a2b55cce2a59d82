"""Procedural tests: run a tool on matched records and classify the outcome."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from core.domain_format import tool_to_payload
from core.effect_language import EffectProgram, EffectSemanticError, EffectSyntaxError, parse_effect_program
from core.interpreter import REJECTION, SUCCESS, ToolOutcome, check_arguments, execute_tool
from core.provider_service import LLMProvider, ask
from core.prompts import build_messages
from core.schema import INVALID_ARGUMENT, DomainFoundation
from core.state import DEFAULT_CLOCK_START, IntegrityError, StateDiff, Violation, instantiate_state

logger = logging.getLogger(__name__)

DEFAULT_MAX_RETRIES = 3
_FENCE_RE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)


class CaseFormatError(ValueError):
    """Raised when a test case document is malformed."""


class FixtureError(ValueError):
    """Raised when a case's matched records do not form a valid state."""

    def __init__(self, case: str, violations: Sequence[Violation]) -> None:
        self.case = case
        self.violations = list(violations)
        preview = "; ".join(str(item) for item in self.violations[:3])
        super().__init__(f"Case '{case}' has invalid matched records: {preview}")


@dataclass(frozen=True)
class ExpectSuccess:
    returns: Mapping[str, Any] = field(default_factory=dict)
    diff: Optional[Mapping[str, Any]] = None

    def describe(self) -> str:
        return "Success"


@dataclass(frozen=True)
class ExpectRejection:
    exception: str

    def describe(self) -> str:
        return f"AnticipatedRejection({self.exception})"


Expectation = Union[ExpectSuccess, ExpectRejection]


@dataclass(frozen=True)
class ProceduralTestCase:
    """One tool call with matched initial records and the outcome it must produce."""

    name: str
    tool: str
    args: Mapping[str, Any]
    expect: Expectation
    records: Optional[Mapping[str, Sequence[Mapping[str, Any]]]] = None
    clock: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        if isinstance(self.expect, ExpectSuccess):
            expect: Dict[str, Any] = {"outcome": SUCCESS, "returns": dict(self.expect.returns)}
            if self.expect.diff is not None:
                expect["diff"] = dict(self.expect.diff)
        else:
            expect = {"outcome": REJECTION, "exception": self.expect.exception}
        payload: Dict[str, Any] = {"name": self.name, "tool": self.tool, "args": dict(self.args), "expect": expect}
        if self.records is not None:
            payload["records"] = {table: list(rows) for table, rows in self.records.items()}
        if self.clock is not None:
            payload["clock"] = self.clock
        return payload


@dataclass(frozen=True)
class TestVerdict:
    """Pass or Fail for one case; ``mismatches`` explains a Fail."""

    case: str
    tool: str
    passed: bool
    expected: str
    actual: str
    mismatches: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "case": self.case,
            "tool": self.tool,
            "verdict": "Pass" if self.passed else "Fail",
            "expected": self.expected,
            "actual": self.actual,
            "mismatches": list(self.mismatches),
        }


@dataclass(frozen=True)
class TestReport:
    verdicts: Tuple[TestVerdict, ...]

    @property
    def passed(self) -> bool:
        return all(verdict.passed for verdict in self.verdicts)

    @property
    def failures(self) -> List[TestVerdict]:
        return [verdict for verdict in self.verdicts if not verdict.passed]

    def to_rows(self) -> List[Tuple[str, str, str, str]]:
        return [
            (verdict.tool, verdict.case, "Pass" if verdict.passed else "Fail", "; ".join(verdict.mismatches))
            for verdict in self.verdicts
        ]


def case_from_payload(payload: Any) -> ProceduralTestCase:
    if not isinstance(payload, Mapping):
        raise CaseFormatError("A test case must be an object.")
    missing = [key for key in ("name", "tool", "expect") if key not in payload]
    if missing:
        raise CaseFormatError(f"Test case is missing {missing}.")
    expect = payload["expect"]
    if not isinstance(expect, Mapping):
        raise CaseFormatError(f"Case '{payload['name']}': expect must be an object.")
    outcome = expect.get("outcome")
    if outcome == SUCCESS:
        expectation: Expectation = ExpectSuccess(returns=dict(expect.get("returns") or {}), diff=expect.get("diff"))
    elif outcome == REJECTION:
        if not isinstance(expect.get("exception"), str):
            raise CaseFormatError(f"Case '{payload['name']}': a rejection expectation needs an exception name.")
        expectation = ExpectRejection(expect["exception"])
    else:
        raise CaseFormatError(f"Case '{payload['name']}': unknown outcome {outcome!r}.")
    args = payload.get("args") or {}
    if not isinstance(args, Mapping):
        raise CaseFormatError(f"Case '{payload['name']}': args must be an object.")
    return ProceduralTestCase(
        name=str(payload["name"]),
        tool=str(payload["tool"]),
        args=dict(args),
        expect=expectation,
        records=payload.get("records"),
        clock=payload.get("clock"),
    )


def cases_from_payload(payload: Any) -> List[ProceduralTestCase]:
    """Decode ``{"cases": [...]}`` (or a bare list) into test cases."""

    items = payload.get("cases") if isinstance(payload, Mapping) else payload
    if not isinstance(items, list):
        raise CaseFormatError("Expected a list of test cases.")
    return [case_from_payload(item) for item in items]


def validate_case(foundation: DomainFoundation, case: ProceduralTestCase) -> List[str]:
    """Problems that make ``case`` unusable against ``foundation``."""

    tool = foundation.tool(case.tool)
    if tool is None:
        return [f"case '{case.name}' names unknown tool '{case.tool}'"]
    problems: List[str] = []
    expects_invalid = isinstance(case.expect, ExpectRejection) and case.expect.exception == INVALID_ARGUMENT
    _, problem = check_arguments(tool, case.args)
    if problem and not expects_invalid:
        problems.append(f"case '{case.name}': {problem}")
    if isinstance(case.expect, ExpectRejection) and case.expect.exception not in tool.exception_names:
        problems.append(f"case '{case.name}' expects undeclared exception '{case.expect.exception}'")
    return problems


# ----------------------------------------------------------------- fragment checks


def _value_matches(expected: Any, actual: Any) -> bool:
    if isinstance(expected, Mapping) and set(expected) == {"$prefix"}:
        return isinstance(actual, str) and actual.startswith(str(expected["$prefix"]))
    if isinstance(expected, (int, float)) and not isinstance(expected, bool):
        return isinstance(actual, (int, float)) and not isinstance(actual, bool) and abs(expected - actual) <= 1e-9
    return expected == actual


def _record_matches(fragment: Mapping[str, Any], record: Mapping[str, Any]) -> bool:
    return all(column in record and _value_matches(value, record[column]) for column, value in fragment.items())


def _diff_mismatches(expected: Mapping[str, Any], actual: StateDiff) -> List[str]:
    problems: List[str] = []
    for table in sorted(set(expected) | set(actual.tables)):
        fragment = expected.get(table)
        changes = actual.tables.get(table)
        if fragment is None:
            if changes is not None and not changes.is_empty():
                problems.append(f"unexpected changes in '{table}'")
            continue
        inserted = list(changes.inserted.values()) if changes else []
        deleted = sorted(str(key) for key in changes.deleted) if changes else []
        modified = changes.modified if changes else []

        want_inserted = fragment.get("inserted", 0)
        if isinstance(want_inserted, int):
            if want_inserted != len(inserted):
                problems.append(f"'{table}': expected {want_inserted} inserted row(s), got {len(inserted)}")
        else:
            remaining = list(inserted)
            for row_fragment in want_inserted:
                match = next((row for row in remaining if _record_matches(row_fragment, row)), None)
                if match is None:
                    problems.append(f"'{table}': no inserted row matches {row_fragment}")
                else:
                    remaining.remove(match)
            if remaining:
                problems.append(f"'{table}': {len(remaining)} unexpected inserted row(s)")

        want_deleted = sorted(str(key) for key in fragment.get("deleted", []))
        if want_deleted != deleted:
            problems.append(f"'{table}': expected deleted {want_deleted}, got {deleted}")

        want_modified = {(str(item["key"]), item["column"]): item for item in fragment.get("modified", [])}
        got_modified = {(str(item.key), item.column): item for item in modified}
        for pair in sorted(set(got_modified) - set(want_modified)):
            problems.append(f"'{table}': unexpected change of {pair[0]}.{pair[1]}")
        for pair in sorted(set(want_modified) - set(got_modified)):
            problems.append(f"'{table}': expected change of {pair[0]}.{pair[1]} did not happen")
        for pair in sorted(set(want_modified) & set(got_modified)):
            wanted = want_modified[pair]
            if "after" in wanted and not _value_matches(wanted["after"], got_modified[pair].after):
                problems.append(
                    f"'{table}': {pair[0]}.{pair[1]} became {got_modified[pair].after!r}, expected {wanted['after']!r}"
                )
    return problems


def _describe(outcome: ToolOutcome) -> str:
    if outcome.is_success:
        return "Success"
    return f"{outcome.variant}({outcome.error_name})"


def run_procedural_test(
    foundation: DomainFoundation,
    programs: Mapping[str, EffectProgram],
    case: ProceduralTestCase,
    *,
    seed_records: Optional[Mapping[str, Sequence[Mapping[str, Any]]]] = None,
    clock_start: str = DEFAULT_CLOCK_START,
) -> TestVerdict:
    """Execute ``case`` and compare the outcome against its expectation."""

    tool = foundation.tool(case.tool)
    if tool is None:
        raise CaseFormatError(f"Case '{case.name}' names unknown tool '{case.tool}'.")
    expected = case.expect.describe()
    program = programs.get(case.tool)
    if program is None:
        return TestVerdict(case.name, case.tool, False, expected, "NoProgram", ("tool has no program",))

    records = case.records if case.records is not None else (seed_records or {})
    try:
        state = instantiate_state(foundation.database, records, case.clock or clock_start)
    except IntegrityError as exc:
        raise FixtureError(case.name, exc.violations) from exc

    outcome = execute_tool(state, tool, program, case.args)
    actual = _describe(outcome)
    mismatches: List[str] = []
    if isinstance(case.expect, ExpectRejection):
        if not outcome.is_rejection or outcome.error_name != case.expect.exception:
            mismatches.append(f"expected {expected}, got {actual}")
    elif not outcome.is_success:
        mismatches.append(f"expected Success, got {actual}: {outcome.message}")
    else:
        result = outcome.result or {}
        for name, value in sorted(case.expect.returns.items()):
            if name not in result:
                mismatches.append(f"return field '{name}' is missing")
            elif not _value_matches(value, result[name]):
                mismatches.append(f"return field '{name}' is {result[name]!r}, expected {value!r}")
        if case.expect.diff is not None and outcome.diff is not None:
            mismatches.extend(_diff_mismatches(case.expect.diff, outcome.diff))

    if mismatches:
        logger.debug("[procedural] %s/%s failed: %s", case.tool, case.name, mismatches)
    return TestVerdict(case.name, case.tool, not mismatches, expected, actual, tuple(mismatches))


def run_cases(
    foundation: DomainFoundation,
    programs: Mapping[str, EffectProgram],
    cases: Sequence[ProceduralTestCase],
    *,
    seed_records: Optional[Mapping[str, Sequence[Mapping[str, Any]]]] = None,
    clock_start: str = DEFAULT_CLOCK_START,
) -> TestReport:
    verdicts = [
        run_procedural_test(foundation, programs, case, seed_records=seed_records, clock_start=clock_start)
        for case in cases
    ]
    return TestReport(tuple(verdicts))


# ---------------------------------------------------------------------- debug loop


@dataclass(frozen=True)
class DebugOutcome:
    """Result of :func:`debug_loop`; ``program`` is None when the loop gave up."""

    tool: str
    program: Optional[EffectProgram]
    attempts: int
    report: Tuple[str, ...] = ()

    @property
    def gave_up(self) -> bool:
        return self.program is None


def strip_fences(text: str) -> str:
    match = _FENCE_RE.search(text)
    return (match.group(1) if match else text).strip() + "\n"


def debug_loop(
    provider: LLMProvider,
    foundation: DomainFoundation,
    tool_name: str,
    program: EffectProgram,
    cases: Sequence[ProceduralTestCase],
    *,
    seed_records: Optional[Mapping[str, Sequence[Mapping[str, Any]]]] = None,
    max_retries: int = DEFAULT_MAX_RETRIES,
    seed: int = 0,
) -> DebugOutcome:
    """Ask the debug agent to repair ``program`` until every case passes or retries run out."""

    tool = foundation.tool(tool_name)
    if tool is None:
        raise CaseFormatError(f"Unknown tool '{tool_name}'.")
    relevant = [case for case in cases if case.tool == tool_name]

    def failures_of(candidate: EffectProgram) -> List[str]:
        report = run_cases(foundation, {tool_name: candidate}, relevant, seed_records=seed_records)
        return [f"{verdict.case}: {'; '.join(verdict.mismatches)}" for verdict in report.failures]

    failures = failures_of(program)
    if not failures:
        return DebugOutcome(tool_name, program, 0)

    history: List[str] = []
    current_source = program.source
    for attempt in range(1, max_retries + 1):
        history.extend(f"attempt {attempt - 1}: {line}" for line in failures)
        context = {
            "attempt": attempt,
            "tool": tool_to_payload(tool),
            "program": current_source,
            "failures": failures,
        }
        reply = ask(provider, "debug_agent", build_messages("debug_agent", context), seed=seed + attempt)
        current_source = strip_fences(reply)
        try:
            candidate = parse_effect_program(current_source, tool, foundation.database)
        except (EffectSyntaxError, EffectSemanticError) as exc:
            failures = [f"program does not parse: {exc}"]
            continue
        failures = failures_of(candidate)
        if not failures:
            logger.info("[procedural] %s repaired after %s attempt(s)", tool_name, attempt)
            return DebugOutcome(tool_name, candidate, attempt, tuple(history))

    history.extend(f"attempt {max_retries}: {line}" for line in failures)
    logger.warning("[procedural] giving up on %s after %s attempt(s)", tool_name, max_retries)
    return DebugOutcome(tool_name, None, max_retries, tuple(history))


__all__ = [
    "CaseFormatError",
    "DebugOutcome",
    "ExpectRejection",
    "ExpectSuccess",
    "FixtureError",
    "ProceduralTestCase",
    "TestReport",
    "TestVerdict",
    "case_from_payload",
    "cases_from_payload",
    "debug_loop",
    "run_cases",
    "run_procedural_test",
    "strip_fences",
    "validate_case",
]
