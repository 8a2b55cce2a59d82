"""Rule-based reward: match final records to ground-truth records under per-column policies."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from core.schema import RewardSpec
from core.state import EnvState, SchemaMismatchError

logger = logging.getLogger(__name__)

EXEMPT = "Exempt"
HARD = "Hard"
SEMANTIC = "Semantic"

COUNT_MISMATCH = "CountMismatch"
UNMATCHED_GT_RECORD = "UnmatchedGtRecord"
HARD_MISMATCH = "HardMismatch"
SEMANTIC_MISMATCH = "SemanticMismatch"

NUMBER_TOLERANCE = 1e-9
EXHAUSTIVE_LIMIT = 8

_PUNCTUATION = re.compile(r"[^\w\s]")

Record = Mapping[str, Any]


def _tokens(text: Any) -> set:
    if text is None:
        return set()
    return set(_PUNCTUATION.sub(" ", str(text).lower()).split())


def similarity(a: Any, b: Any) -> float:
    """Jaccard similarity of lowercase, punctuation-free token sets (1.0 when both are empty)."""

    left, right = _tokens(a), _tokens(b)
    if not left and not right:
        return 1.0
    if not left or not right:
        return 0.0
    return len(left & right) / len(left | right)


def fuzzy_match(a: Any, b: Any, threshold: float = 0.5) -> bool:
    return similarity(a, b) >= threshold


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def hard_equal(a: Any, b: Any) -> bool:
    if _is_number(a) and _is_number(b):
        return abs(float(a) - float(b)) <= NUMBER_TOLERANCE
    if isinstance(a, str) and isinstance(b, str):
        return a.strip() == b.strip()
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(hard_equal(x, y) for x, y in zip(a, b))
    return a == b


def _signature_value(value: Any) -> Any:
    if _is_number(value):
        return ("n", round(float(value), 9))
    if isinstance(value, str):
        return ("s", value.strip())
    if isinstance(value, list):
        return ("l", tuple(_signature_value(item) for item in value))
    return ("v", value)


@dataclass(frozen=True)
class MatchFailure:
    kind: str
    column: Optional[str] = None
    expected: Any = None
    actual: Any = None
    similarity: Optional[float] = None
    gt_key: Any = None

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"kind": self.kind}
        for name in ("column", "expected", "actual", "similarity", "gt_key"):
            value = getattr(self, name)
            if value is not None:
                payload[name] = value
        return payload


@dataclass(frozen=True)
class TableVerdict:
    """Matched bijection (as ``(gt_index, final_index)`` pairs) or a failure."""

    table: str
    pairs: Tuple[Tuple[int, int], ...] = ()
    failure: Optional[MatchFailure] = None

    @property
    def matched(self) -> bool:
        return self.failure is None

    def to_dict(self) -> Dict[str, Any]:
        if self.failure is None:
            return {"matched": True, "pairs": [list(pair) for pair in self.pairs]}
        return {"matched": False, "failure": self.failure.to_dict()}


@dataclass(frozen=True)
class EvalReport:
    reward: int
    tables: Mapping[str, TableVerdict] = field(default_factory=dict)

    def failures(self) -> Dict[str, MatchFailure]:
        return {name: verdict.failure for name, verdict in self.tables.items() if verdict.failure is not None}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "reward": self.reward,
            "tables": {name: self.tables[name].to_dict() for name in sorted(self.tables)},
        }


class _Comparator:
    def __init__(self, policies: Mapping[str, str], columns: Sequence[str], threshold: float) -> None:
        self.hard = [column for column in columns if policies.get(column, HARD) == HARD]
        self.semantic = [column for column in columns if policies.get(column, HARD) == SEMANTIC]
        self.threshold = threshold

    def signature(self, record: Record) -> Tuple[Any, ...]:
        return tuple(_signature_value(record.get(column)) for column in self.hard)

    def hard_differences(self, gt: Record, final: Record) -> List[str]:
        return [column for column in self.hard if not hard_equal(gt.get(column), final.get(column))]

    def semantic_differences(self, gt: Record, final: Record) -> List[Tuple[str, float]]:
        misses = []
        for column in self.semantic:
            score = similarity(gt.get(column), final.get(column))
            if score < self.threshold:
                misses.append((column, score))
        return misses

    def compatible(self, gt: Record, final: Record) -> bool:
        return not self.hard_differences(gt, final) and not self.semantic_differences(gt, final)


def _greedy(comparator: _Comparator, gt: Sequence[Record], final: Sequence[Record]) -> Optional[List[Tuple[int, int]]]:
    groups: Dict[Tuple[Any, ...], List[int]] = {}
    for index, record in enumerate(final):
        groups.setdefault(comparator.signature(record), []).append(index)
    used: set = set()
    pairs: List[Tuple[int, int]] = []
    for gt_index, record in enumerate(gt):
        candidates = groups.get(comparator.signature(record), [])
        choice = next((i for i in candidates if i not in used and comparator.compatible(record, final[i])), None)
        if choice is None:
            return None
        used.add(choice)
        pairs.append((gt_index, choice))
    return pairs


def _exhaustive(allowed: Sequence[Sequence[int]], size: int) -> Optional[List[Tuple[int, int]]]:
    assignment: List[int] = []
    used = [False] * size

    def search(row: int) -> bool:
        if row == len(allowed):
            return True
        for column in allowed[row]:
            if not used[column]:
                used[column] = True
                assignment.append(column)
                if search(row + 1):
                    return True
                assignment.pop()
                used[column] = False
        return False

    return list(enumerate(assignment)) if search(0) else None


def _augmenting(allowed: Sequence[Sequence[int]], size: int) -> Optional[List[Tuple[int, int]]]:
    owner: List[Optional[int]] = [None] * size

    def attempt(row: int, seen: List[bool]) -> bool:
        for column in allowed[row]:
            if seen[column]:
                continue
            seen[column] = True
            if owner[column] is None or attempt(owner[column], seen):
                owner[column] = row
                return True
        return False

    for row in range(len(allowed)):
        if not attempt(row, [False] * size):
            return None
    return sorted((row, column) for column, row in enumerate(owner) if row is not None)


def _explain(comparator: _Comparator, gt: Sequence[Record], final: Sequence[Record], allowed: Sequence[Sequence[int]], key_column: Optional[str]) -> MatchFailure:
    for gt_index, candidates in enumerate(allowed):
        if candidates:
            continue
        record = gt[gt_index]
        gt_key = record.get(key_column) if key_column else None
        ranked = sorted(
            range(len(final)),
            key=lambda i: (len(comparator.hard_differences(record, final[i])), i),
        )
        closest = final[ranked[0]]
        hard = comparator.hard_differences(record, closest)
        if hard:
            column = hard[0]
            return MatchFailure(HARD_MISMATCH, column, record.get(column), closest.get(column), gt_key=gt_key)
        column, score = comparator.semantic_differences(record, closest)[0]
        return MatchFailure(SEMANTIC_MISMATCH, column, record.get(column), closest.get(column), round(score, 6), gt_key)
    return MatchFailure(UNMATCHED_GT_RECORD)


def match_table(
    gt_records: Sequence[Record],
    final_records: Sequence[Record],
    policies: Mapping[str, str],
    *,
    threshold: float = 0.5,
    columns: Optional[Sequence[str]] = None,
    table: str = "",
    key_column: Optional[str] = None,
) -> TableVerdict:
    """Find a bijection between record lists: greedy on Hard signatures, then a complete search."""

    if len(gt_records) != len(final_records):
        return TableVerdict(
            table,
            failure=MatchFailure(COUNT_MISMATCH, expected=len(gt_records), actual=len(final_records)),
        )
    names = list(columns) if columns is not None else sorted({name for record in gt_records for name in record} | {name for record in final_records for name in record})
    comparator = _Comparator(policies, [name for name in names if policies.get(name, HARD) != EXEMPT], threshold)

    pairs = _greedy(comparator, gt_records, final_records)
    if pairs is not None:
        return TableVerdict(table, tuple(pairs))

    allowed = [
        [index for index, final in enumerate(final_records) if comparator.compatible(record, final)]
        for record in gt_records
    ]
    size = len(final_records)
    pairs = _exhaustive(allowed, size) if size <= EXHAUSTIVE_LIMIT else _augmenting(allowed, size)
    if pairs is not None:
        return TableVerdict(table, tuple(pairs))
    return TableVerdict(table, failure=_explain(comparator, gt_records, final_records, allowed, key_column))


def evaluate(final: EnvState, gt: EnvState, spec: RewardSpec) -> EvalReport:
    """Reward 1 iff every table of ``final`` matches ``gt`` record-for-record under ``spec``."""

    if final.database != gt.database:
        raise SchemaMismatchError("Final and ground-truth states do not share a database schema.")
    verdicts: Dict[str, TableVerdict] = {}
    for table in sorted(gt.database.tables, key=lambda item: item.name):
        policies = {column.name: spec.policy(table.name, column.name) for column in table.columns}
        verdicts[table.name] = match_table(
            gt.records(table.name),
            final.records(table.name),
            policies,
            threshold=spec.semantic_threshold,
            columns=table.column_names,
            table=table.name,
            key_column=table.primary_key,
        )
    reward = int(all(verdict.matched for verdict in verdicts.values()))
    if not reward:
        logger.debug("[reward] unmatched tables: %s", sorted(name for name, v in verdicts.items() if not v.matched))
    return EvalReport(reward, verdicts)


__all__ = [
    "COUNT_MISMATCH",
    "EXEMPT",
    "EvalReport",
    "HARD",
    "HARD_MISMATCH",
    "MatchFailure",
    "SEMANTIC",
    "SEMANTIC_MISMATCH",
    "TableVerdict",
    "UNMATCHED_GT_RECORD",
    "evaluate",
    "fuzzy_match",
    "hard_equal",
    "match_table",
    "similarity",
]
