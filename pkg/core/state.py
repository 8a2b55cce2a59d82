"""In-memory relational environment state with integrity checks, snapshots and diffs."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from core.domain_format import canonical_json
from core.schema import DATETIME_FORMAT, DatabaseSchema, TableSchema, conforms, is_datetime_text, normalise_value

logger = logging.getLogger(__name__)

DEFAULT_CLOCK_START = "2024-03-15 09:30:00"
DEFAULT_CLOCK_STEP_SECONDS = 60
ID_WIDTH = 6

Record = Dict[str, Any]
Key = Any


@dataclass(frozen=True)
class Violation:
    """One integrity problem found in a state."""

    kind: str
    table: str
    key: Any = None
    column: Optional[str] = None
    detail: str = ""

    def __str__(self) -> str:
        location = self.table if self.key is None else f"{self.table}[{self.key!r}]"
        if self.column:
            location = f"{location}.{self.column}"
        return f"{self.kind} at {location}: {self.detail}" if self.detail else f"{self.kind} at {location}"

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "table": self.table, "key": self.key, "column": self.column, "detail": self.detail}


class IntegrityError(ValueError):
    """Raised when records cannot form a valid state."""

    def __init__(self, violations: Sequence[Violation]) -> None:
        self.violations = list(violations)
        preview = "; ".join(str(item) for item in self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"{len(self.violations)} integrity violation(s): {preview}{more}")


class SchemaMismatchError(ValueError):
    """Raised when two states (or a diff and a state) do not share a schema."""


def key_order(key: Key) -> Tuple[int, Any]:
    if isinstance(key, bool) or not isinstance(key, (int, float)):
        return (1, str(key))
    return (0, key)


def advance_datetime(value: str, seconds: int) -> str:
    moment = datetime.strptime(value, DATETIME_FORMAT) + timedelta(seconds=seconds)
    return moment.strftime(DATETIME_FORMAT)


@dataclass
class EnvState:
    """Mutable, single-owner database state for one environment."""

    database: DatabaseSchema
    tables: Dict[str, Dict[Key, Record]] = field(default_factory=dict)
    clock: str = DEFAULT_CLOCK_START
    clock_step_seconds: int = DEFAULT_CLOCK_STEP_SECONDS
    id_counters: Dict[str, int] = field(default_factory=dict)

    def clone(self) -> "EnvState":
        return EnvState(
            database=self.database,
            tables=copy.deepcopy(self.tables),
            clock=self.clock,
            clock_step_seconds=self.clock_step_seconds,
            id_counters=dict(self.id_counters),
        )

    def adopt(self, other: "EnvState") -> None:
        """Replace this state's contents with ``other``'s (used to commit a transaction)."""

        self.tables = other.tables
        self.clock = other.clock
        self.clock_step_seconds = other.clock_step_seconds
        self.id_counters = other.id_counters

    def table(self, name: str) -> Dict[Key, Record]:
        return self.tables.setdefault(name, {})

    def get(self, table: str, key: Key) -> Optional[Record]:
        return self.tables.get(table, {}).get(key)

    def records(self, table: str) -> List[Record]:
        rows = self.tables.get(table, {})
        return [rows[key] for key in sorted(rows, key=key_order)]

    def keys(self, table: str) -> List[Key]:
        return sorted(self.tables.get(table, {}), key=key_order)

    def record_count(self) -> int:
        return sum(len(rows) for rows in self.tables.values())

    def now(self) -> str:
        return self.clock

    def advance_clock(self) -> None:
        self.clock = advance_datetime(self.clock, self.clock_step_seconds)

    def next_id(self, table: str, prefix: str) -> str:
        """Return the next generated key for ``table``, skipping values already present."""

        counter = self.id_counters.get(table, 0)
        rows = self.tables.get(table, {})
        while True:
            counter += 1
            candidate = f"{prefix}{counter:0{ID_WIDTH}d}"
            if candidate not in rows:
                break
        self.id_counters[table] = counter
        return candidate


def _column_violations(table: TableSchema, key: Key, record: Mapping[str, Any]) -> List[Violation]:
    violations: List[Violation] = []
    declared = set(table.column_names)
    for column in sorted(set(record) - declared):
        violations.append(Violation("UnknownColumn", table.name, key, column, "column is not declared"))
    for column in table.columns:
        if column.name not in record:
            violations.append(Violation("MissingColumn", table.name, key, column.name, "column value is absent"))
            continue
        value = record[column.name]
        if value is None:
            if not column.nullable or column.name == table.primary_key:
                violations.append(Violation("NullViolation", table.name, key, column.name, "null in non-nullable column"))
        elif not conforms(value, column.type):
            violations.append(
                Violation("TypeViolation", table.name, key, column.name, f"{value!r} is not a valid {column.type}")
            )
    return violations


def check_integrity(state: EnvState) -> List[Violation]:
    """Return every violation in ``state``; an empty list means the state is valid."""

    violations: List[Violation] = []
    database = state.database
    for name in sorted(state.tables):
        if database.table(name) is None:
            violations.append(Violation("UnknownTable", name, detail="table is not declared"))

    for table in sorted(database.tables, key=lambda item: item.name):
        rows = state.tables.get(table.name, {})
        seen: Dict[Any, Key] = {}
        for key in sorted(rows, key=key_order):
            record = rows[key]
            violations.extend(_column_violations(table, key, record))
            pk_value = record.get(table.primary_key)
            if pk_value in seen:
                violations.append(
                    Violation("DuplicateKey", table.name, key, table.primary_key, f"primary key {pk_value!r} repeats")
                )
                continue
            seen[pk_value] = key
            if pk_value != key:
                violations.append(
                    Violation("KeyMismatch", table.name, key, table.primary_key, f"stored under {key!r} but holds {pk_value!r}")
                )
            for fk in table.foreign_keys:
                value = record.get(fk.column)
                if value is None:
                    continue
                if value not in state.tables.get(fk.table, {}):
                    violations.append(
                        Violation("DanglingReference", table.name, key, fk.column, f"{value!r} not found in {fk.reference}")
                    )
    return violations


def complete_record(table: TableSchema, values: Mapping[str, Any]) -> Record:
    """Fill absent columns with their defaults and normalise stored values."""

    record: Record = {}
    for column in table.columns:
        value = values.get(column.name, column.default)
        if value is not None and conforms(value, column.type):
            value = normalise_value(value, column.type)
        record[column.name] = value
    for extra in values:
        if extra not in record:
            record[extra] = values[extra]
    return record


def instantiate_state(
    database: DatabaseSchema,
    record_set: Mapping[str, Iterable[Mapping[str, Any]]],
    clock_start: str = DEFAULT_CLOCK_START,
    *,
    clock_step_seconds: int = DEFAULT_CLOCK_STEP_SECONDS,
    id_counters: Optional[Mapping[str, int]] = None,
) -> EnvState:
    """Build a state from per-table record lists, failing with the full violation list."""

    violations: List[Violation] = []
    if not is_datetime_text(clock_start):
        violations.append(Violation("TypeViolation", "<clock>", detail=f"{clock_start!r} is not a valid datetime"))

    tables: Dict[str, Dict[Key, Record]] = {table.name: {} for table in database.tables}
    for table_name in sorted(record_set):
        table = database.table(table_name)
        if table is None:
            violations.append(Violation("UnknownTable", table_name, detail="table is not declared"))
            continue
        rows = tables[table_name]
        for position, raw in enumerate(record_set[table_name]):
            record = complete_record(table, raw)
            key = record.get(table.primary_key)
            if key is None:
                violations.append(
                    Violation("NullViolation", table_name, position, table.primary_key, "record has no primary key")
                )
                continue
            if key in rows:
                violations.append(Violation("DuplicateKey", table_name, key, table.primary_key, "primary key repeats"))
                continue
            rows[key] = record

    state = EnvState(
        database=database,
        tables=tables,
        clock=clock_start,
        clock_step_seconds=clock_step_seconds,
        id_counters=dict(id_counters or {}),
    )
    violations.extend(check_integrity(state))
    if violations:
        raise IntegrityError(violations)
    return state


def state_to_payload(state: EnvState) -> Dict[str, Any]:
    return {
        "clock": state.clock,
        "clock_step_seconds": state.clock_step_seconds,
        "id_counters": dict(sorted(state.id_counters.items())),
        "tables": {
            table.name: state.records(table.name)
            for table in sorted(state.database.tables, key=lambda item: item.name)
        },
    }


def canonical_serialize(state: EnvState) -> str:
    """Render ``state`` as canonical text: sorted tables, sorted keys, stable bytes."""

    return canonical_json(state_to_payload(state))


def parse_state(text: str, database: DatabaseSchema) -> EnvState:
    """Load a state document written by :func:`canonical_serialize`."""

    payload = json.loads(text)
    if not isinstance(payload, dict) or not isinstance(payload.get("tables", {}), dict):
        raise ValueError("State document must be an object with a 'tables' object.")
    counters = payload.get("id_counters") or {}
    return instantiate_state(
        database,
        payload.get("tables", {}),
        payload.get("clock", DEFAULT_CLOCK_START),
        clock_step_seconds=int(payload.get("clock_step_seconds", DEFAULT_CLOCK_STEP_SECONDS)),
        id_counters={str(name): int(value) for name, value in counters.items()},
    )


@dataclass(frozen=True)
class StateSnapshot:
    """Immutable capture of a state; safe to share across threads."""

    database: DatabaseSchema
    text: str


def snapshot(state: EnvState) -> StateSnapshot:
    return StateSnapshot(database=state.database, text=canonical_serialize(state))


def restore(snap: StateSnapshot) -> EnvState:
    return parse_state(snap.text, snap.database)


@dataclass(frozen=True)
class ModifiedValue:
    key: Any
    column: str
    before: Any
    after: Any


@dataclass
class TableDiff:
    inserted: Dict[Key, Record] = field(default_factory=dict)
    deleted: Dict[Key, Record] = field(default_factory=dict)
    modified: List[ModifiedValue] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.inserted or self.deleted or self.modified)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "inserted": [self.inserted[key] for key in sorted(self.inserted, key=key_order)],
            "deleted": sorted(self.deleted, key=key_order),
            "modified": [
                {"key": item.key, "column": item.column, "before": item.before, "after": item.after}
                for item in self.modified
            ],
        }


@dataclass
class StateDiff:
    """Changes between two states of one schema."""

    tables: Dict[str, TableDiff] = field(default_factory=dict)
    clock: Optional[Tuple[str, str]] = None
    id_counters: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    def records_changed(self) -> bool:
        return any(not diff.is_empty() for diff in self.tables.values())

    def is_empty(self) -> bool:
        return not self.records_changed() and self.clock is None and not self.id_counters

    def touched_keys(self) -> Dict[str, Set[Key]]:
        touched: Dict[str, Set[Key]] = {}
        for name, diff in self.tables.items():
            keys = set(diff.inserted) | set(diff.deleted) | {item.key for item in diff.modified}
            if keys:
                touched[name] = keys
        return touched

    def restricted(self, keys_by_table: Mapping[str, Set[Key]]) -> "StateDiff":
        """Keep only record changes whose key is listed in ``keys_by_table``."""

        tables: Dict[str, TableDiff] = {}
        for name, diff in self.tables.items():
            allowed = keys_by_table.get(name, set())
            kept = TableDiff(
                inserted={k: v for k, v in diff.inserted.items() if k in allowed},
                deleted={k: v for k, v in diff.deleted.items() if k in allowed},
                modified=[item for item in diff.modified if item.key in allowed],
            )
            if not kept.is_empty():
                tables[name] = kept
        return StateDiff(tables=tables)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tables": {name: self.tables[name].to_dict() for name in sorted(self.tables)},
            "clock": list(self.clock) if self.clock else None,
            "id_counters": {name: list(pair) for name, pair in sorted(self.id_counters.items())},
        }


def _same_schema(a: DatabaseSchema, b: DatabaseSchema) -> bool:
    return a is b or a == b


def diff(a: EnvState, b: EnvState) -> StateDiff:
    """Compute the changes that turn ``a`` into ``b``."""

    if not _same_schema(a.database, b.database):
        raise SchemaMismatchError("States do not share a database schema.")

    result = StateDiff()
    for table in sorted(a.database.tables, key=lambda item: item.name):
        before = a.tables.get(table.name, {})
        after = b.tables.get(table.name, {})
        table_diff = TableDiff()
        for key in sorted(set(after) - set(before), key=key_order):
            table_diff.inserted[key] = copy.deepcopy(after[key])
        for key in sorted(set(before) - set(after), key=key_order):
            table_diff.deleted[key] = copy.deepcopy(before[key])
        for key in sorted(set(before) & set(after), key=key_order):
            old, new = before[key], after[key]
            if old == new:
                continue
            for column in sorted(set(old) | set(new)):
                if old.get(column) != new.get(column) or (column in old) != (column in new):
                    table_diff.modified.append(
                        ModifiedValue(key, column, copy.deepcopy(old.get(column)), copy.deepcopy(new.get(column)))
                    )
        if not table_diff.is_empty():
            result.tables[table.name] = table_diff

    if a.clock != b.clock:
        result.clock = (a.clock, b.clock)
    for name in sorted(set(a.id_counters) | set(b.id_counters)):
        old_count, new_count = a.id_counters.get(name, 0), b.id_counters.get(name, 0)
        if old_count != new_count:
            result.id_counters[name] = (old_count, new_count)
    return result


def apply_diff(state_diff: StateDiff, state: EnvState) -> EnvState:
    """Return a new state equal to ``state`` with ``state_diff`` applied."""

    result = state.clone()
    for name, table_diff in state_diff.tables.items():
        if state.database.table(name) is None:
            raise SchemaMismatchError(f"Diff names table '{name}' which the state does not declare.")
        rows = result.table(name)
        for key in table_diff.deleted:
            if key not in rows:
                raise SchemaMismatchError(f"Diff deletes {name}[{key!r}] which is absent.")
            del rows[key]
        for key, record in table_diff.inserted.items():
            if key in rows:
                raise SchemaMismatchError(f"Diff inserts {name}[{key!r}] which already exists.")
            rows[key] = copy.deepcopy(record)
        for item in table_diff.modified:
            if item.key not in rows:
                raise SchemaMismatchError(f"Diff modifies {name}[{item.key!r}] which is absent.")
            rows[item.key][item.column] = copy.deepcopy(item.after)
    if state_diff.clock is not None:
        result.clock = state_diff.clock[1]
    for name, (_, new_count) in state_diff.id_counters.items():
        if new_count:
            result.id_counters[name] = new_count
        else:
            result.id_counters.pop(name, None)
    return result


def states_equal(a: EnvState, b: EnvState) -> bool:
    return canonical_serialize(a) == canonical_serialize(b)


__all__ = [
    "DEFAULT_CLOCK_START",
    "DEFAULT_CLOCK_STEP_SECONDS",
    "EnvState",
    "IntegrityError",
    "ModifiedValue",
    "SchemaMismatchError",
    "StateDiff",
    "StateSnapshot",
    "TableDiff",
    "Violation",
    "advance_datetime",
    "apply_diff",
    "canonical_serialize",
    "check_integrity",
    "complete_record",
    "diff",
    "instantiate_state",
    "key_order",
    "parse_state",
    "restore",
    "snapshot",
    "state_to_payload",
    "states_equal",
]
