"""Domain foundation types: tool schemas, database schemas, mappings and reward policies."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple

logger = logging.getLogger(__name__)

SEMANTIC_TYPES: Tuple[str, ...] = ("string", "integer", "number", "boolean", "datetime", "list-of-string")
POLICIES: Tuple[str, ...] = ("Exempt", "Hard", "Semantic")
DATETIME_FORMAT = "%Y-%m-%d %H:%M:%S"
INVALID_ARGUMENT = "InvalidArgument"
INVALID_ARGUMENT_MESSAGE = "Invalid argument: {detail}"
DEFAULT_SEMANTIC_THRESHOLD = 0.5

_IDENTIFIER = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class DomainSyntaxError(ValueError):
    """Raised when a domain document cannot be decoded."""

    def __init__(self, message: str, *, line: int = 0, column: int = 0) -> None:
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class DomainValidationError(ValueError):
    """Raised with every invariant violation found in a domain foundation."""

    def __init__(self, violations: Sequence[str]) -> None:
        self.violations = list(violations)
        joined = "; ".join(self.violations)
        super().__init__(f"{len(self.violations)} domain violation(s): {joined}")


class UnknownTableError(ValueError):
    """Raised when an effect program references a table the database does not declare."""

    def __init__(self, tool: str, table: str) -> None:
        super().__init__(f"Tool '{tool}' references unknown table '{table}'")
        self.tool = tool
        self.table = table


def is_identifier(value: object) -> bool:
    return isinstance(value, str) and bool(_IDENTIFIER.match(value))


def is_datetime_text(value: object) -> bool:
    if not isinstance(value, str):
        return False
    try:
        parsed = datetime.strptime(value, DATETIME_FORMAT)
    except ValueError:
        return False
    return parsed.strftime(DATETIME_FORMAT) == value


def conforms(value: Any, semantic_type: str) -> bool:
    """Return True when ``value`` is a valid instance of ``semantic_type``."""

    if semantic_type == "string":
        return isinstance(value, str)
    if semantic_type == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if semantic_type == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if semantic_type == "boolean":
        return isinstance(value, bool)
    if semantic_type == "datetime":
        return is_datetime_text(value)
    if semantic_type == "list-of-string":
        return isinstance(value, list) and all(isinstance(item, str) for item in value)
    return False


def normalise_value(value: Any, semantic_type: str) -> Any:
    """Coerce a conforming value into its stored form (numbers are stored as floats)."""

    if value is None:
        return None
    if semantic_type == "number":
        return float(value)
    if semantic_type == "list-of-string":
        return list(value)
    return value


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str
    required: bool = True
    description: str = ""


@dataclass(frozen=True)
class ReturnField:
    name: str
    type: str


@dataclass(frozen=True)
class DeclaredException:
    name: str
    message: str


@dataclass(frozen=True)
class ToolSchema:
    """Interface of one atomic tool."""

    name: str
    description: str
    params: Tuple[ParamSpec, ...] = ()
    returns: Tuple[ReturnField, ...] = ()
    preconditions: Tuple[str, ...] = ()
    postconditions: Tuple[str, ...] = ()
    declared_exceptions: Tuple[DeclaredException, ...] = ()

    def param(self, name: str) -> Optional[ParamSpec]:
        for spec in self.params:
            if spec.name == name:
                return spec
        return None

    def return_field(self, name: str) -> Optional[ReturnField]:
        for spec in self.returns:
            if spec.name == name:
                return spec
        return None

    def exception(self, name: str) -> Optional[DeclaredException]:
        for declared in self.declared_exceptions:
            if declared.name == name:
                return declared
        if name == INVALID_ARGUMENT:
            return DeclaredException(INVALID_ARGUMENT, INVALID_ARGUMENT_MESSAGE)
        return None

    @property
    def exception_names(self) -> FrozenSet[str]:
        names = {declared.name for declared in self.declared_exceptions}
        names.add(INVALID_ARGUMENT)
        return frozenset(names)


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    type: str
    nullable: bool = False
    default: Any = None


@dataclass(frozen=True)
class ForeignKey:
    column: str
    table: str
    target_column: str

    @property
    def reference(self) -> str:
        return f"{self.table}.{self.target_column}"


@dataclass(frozen=True)
class TableSchema:
    name: str
    primary_key: str
    columns: Tuple[ColumnSpec, ...]
    foreign_keys: Tuple[ForeignKey, ...] = ()

    def column(self, name: str) -> Optional[ColumnSpec]:
        for spec in self.columns:
            if spec.name == name:
                return spec
        return None

    @property
    def column_names(self) -> Tuple[str, ...]:
        return tuple(spec.name for spec in self.columns)

    def foreign_key(self, column: str) -> Optional[ForeignKey]:
        for fk in self.foreign_keys:
            if fk.column == column:
                return fk
        return None


@dataclass(frozen=True)
class DatabaseSchema:
    tables: Tuple[TableSchema, ...] = ()

    def table(self, name: str) -> Optional[TableSchema]:
        for spec in self.tables:
            if spec.name == name:
                return spec
        return None

    @property
    def table_names(self) -> Tuple[str, ...]:
        return tuple(spec.name for spec in self.tables)

    def parent_order(self) -> List[str]:
        """Table names ordered so that FK targets precede the tables referencing them."""

        ordered: List[str] = []
        visiting: set[str] = set()

        def visit(name: str) -> None:
            if name in ordered or name in visiting:
                return
            visiting.add(name)
            table = self.table(name)
            if table is not None:
                for fk in sorted(table.foreign_keys, key=lambda item: item.column):
                    if fk.table != name:
                        visit(fk.table)
            visiting.discard(name)
            ordered.append(name)

        for name in sorted(self.table_names):
            visit(name)
        return ordered


@dataclass(frozen=True)
class ToolAccess:
    reads: FrozenSet[str] = frozenset()
    writes: FrozenSet[str] = frozenset()


@dataclass(frozen=True)
class ToolDbMapping:
    access: Mapping[str, ToolAccess] = field(default_factory=dict)

    def reads(self, tool: str) -> FrozenSet[str]:
        entry = self.access.get(tool)
        return entry.reads if entry else frozenset()

    def writes(self, tool: str) -> FrozenSet[str]:
        entry = self.access.get(tool)
        return entry.writes if entry else frozenset()

    def tables_touched(self, tool: str) -> FrozenSet[str]:
        return self.reads(tool) | self.writes(tool)


@dataclass(frozen=True)
class RewardSpec:
    policies: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    semantic_threshold: float = DEFAULT_SEMANTIC_THRESHOLD

    def policy(self, table: str, column: str) -> str:
        return self.policies.get(table, {}).get(column, "Hard")

    def column_policies(self, table: str) -> Dict[str, str]:
        return dict(self.policies.get(table, {}))


@dataclass(frozen=True)
class DomainFoundation:
    """A domain's tools, database, tool-table mapping and reward policies."""

    domain_name: str
    tools: Tuple[ToolSchema, ...]
    database: DatabaseSchema
    mapping: ToolDbMapping
    reward_policies: RewardSpec

    def tool(self, name: str) -> Optional[ToolSchema]:
        for spec in self.tools:
            if spec.name == name:
                return spec
        return None

    @property
    def tool_names(self) -> Tuple[str, ...]:
        return tuple(spec.name for spec in self.tools)


class TableReferencing(Protocol):
    """Anything that can enumerate the tables it reads and writes."""

    tool_name: str

    def table_references(self) -> Iterable[Tuple[str, str]]:
        """Yield ``(table, access)`` pairs where access is ``read`` or ``write``."""


def _duplicates(names: Iterable[str]) -> List[str]:
    seen: set[str] = set()
    dupes: List[str] = []
    for name in names:
        if name in seen and name not in dupes:
            dupes.append(name)
        seen.add(name)
    return dupes


def _validate_tool(tool: ToolSchema) -> List[str]:
    violations: List[str] = []
    where = f"tool '{tool.name}'"
    if not is_identifier(tool.name):
        violations.append(f"{where}: name is not an identifier")
    for dupe in _duplicates(param.name for param in tool.params):
        violations.append(f"{where}: duplicate param '{dupe}'")
    for param in tool.params:
        if not is_identifier(param.name):
            violations.append(f"{where}: param '{param.name}' is not an identifier")
        if param.type not in SEMANTIC_TYPES:
            violations.append(f"{where}: param '{param.name}' has unknown type '{param.type}'")
    for dupe in _duplicates(item.name for item in tool.returns):
        violations.append(f"{where}: duplicate return field '{dupe}'")
    for item in tool.returns:
        if item.type not in SEMANTIC_TYPES:
            violations.append(f"{where}: return field '{item.name}' has unknown type '{item.type}'")
    for token in (*tool.preconditions, *tool.postconditions):
        if not is_identifier(token):
            violations.append(f"{where}: condition token '{token}' is not a nonempty identifier")
    for dupe in _duplicates(item.name for item in tool.declared_exceptions):
        violations.append(f"{where}: duplicate exception '{dupe}'")
    for declared in tool.declared_exceptions:
        if not is_identifier(declared.name):
            violations.append(f"{where}: exception '{declared.name}' is not an identifier")
    return violations


def _validate_table(table: TableSchema, database: DatabaseSchema) -> List[str]:
    violations: List[str] = []
    where = f"table '{table.name}'"
    if not is_identifier(table.name):
        violations.append(f"{where}: name is not an identifier")
    for dupe in _duplicates(table.column_names):
        violations.append(f"{where}: duplicate column '{dupe}'")
    if table.column(table.primary_key) is None:
        violations.append(f"{where}: primary key '{table.primary_key}' is not a declared column")
    for column in table.columns:
        if column.type not in SEMANTIC_TYPES:
            violations.append(f"{where}: column '{column.name}' has unknown type '{column.type}'")
        elif column.default is not None and not conforms(column.default, column.type):
            violations.append(f"{where}: default of column '{column.name}' does not match type '{column.type}'")
    for fk in table.foreign_keys:
        if table.column(fk.column) is None:
            violations.append(f"{where}: foreign key column '{fk.column}' is not declared")
        target = database.table(fk.table)
        if target is None:
            violations.append(f"{where}: foreign key '{fk.column}' targets unknown table '{fk.table}'")
        elif target.primary_key != fk.target_column:
            violations.append(
                f"{where}: foreign key '{fk.column}' must target the primary key of '{fk.table}'"
            )
    return violations


def _non_nullable_fk_cycles(database: DatabaseSchema) -> List[str]:
    edges: Dict[str, List[str]] = {}
    for table in database.tables:
        for fk in table.foreign_keys:
            column = table.column(fk.column)
            if column is not None and not column.nullable and database.table(fk.table) is not None:
                edges.setdefault(table.name, []).append(fk.table)

    cycles: List[str] = []
    state: Dict[str, int] = {}

    def dfs(node: str, path: List[str]) -> None:
        state[node] = 1
        for nxt in sorted(edges.get(node, [])):
            if state.get(nxt) == 1:
                cycle = path[path.index(nxt):] + [nxt]
                cycles.append("foreign key cycle through non-nullable columns: " + " -> ".join(cycle))
            elif state.get(nxt) is None:
                dfs(nxt, path + [nxt])
        state[node] = 2

    for name in sorted(edges):
        if state.get(name) is None:
            dfs(name, [name])
    return cycles


def validate_domain(domain: DomainFoundation) -> List[str]:
    """Return every invariant violation of ``domain`` (empty when valid)."""

    violations: List[str] = []
    if not is_identifier(domain.domain_name):
        violations.append(f"domain_name '{domain.domain_name}' is not an identifier")

    for dupe in _duplicates(domain.tool_names):
        violations.append(f"duplicate tool name '{dupe}'")
    for dupe in _duplicates(domain.database.table_names):
        violations.append(f"duplicate table name '{dupe}'")

    for tool in domain.tools:
        violations.extend(_validate_tool(tool))
    for table in domain.database.tables:
        violations.extend(_validate_table(table, domain.database))
    violations.extend(_non_nullable_fk_cycles(domain.database))

    known_tables = set(domain.database.table_names)
    known_tools = set(domain.tool_names)
    for tool_name in sorted(domain.mapping.access):
        if tool_name not in known_tools:
            violations.append(f"mapping names unknown tool '{tool_name}'")
        entry = domain.mapping.access[tool_name]
        for table in sorted(entry.reads | entry.writes):
            if table not in known_tables:
                violations.append(f"mapping for tool '{tool_name}' names unknown table '{table}'")

    spec = domain.reward_policies
    if not 0.0 <= spec.semantic_threshold <= 1.0:
        violations.append(f"semantic_threshold {spec.semantic_threshold} is outside [0, 1]")
    for table_name in sorted(spec.policies):
        table = domain.database.table(table_name)
        if table is None:
            violations.append(f"reward_policies name unknown table '{table_name}'")
            continue
        for column, policy in sorted(spec.policies[table_name].items()):
            if table.column(column) is None:
                violations.append(f"reward_policies name unknown column '{table_name}.{column}'")
            if policy not in POLICIES:
                violations.append(f"reward policy '{policy}' for '{table_name}.{column}' is not one of {list(POLICIES)}")
    for table in domain.database.tables:
        declared = spec.policies.get(table.name, {})
        for column in table.columns:
            if column.name not in declared:
                violations.append(f"column '{table.name}.{column.name}' has no reward policy")

    return violations


def derive_mapping(programs: Iterable[TableReferencing], database: DatabaseSchema) -> ToolDbMapping:
    """Derive reads/writes per tool by scanning each program's table references."""

    known = set(database.table_names)
    access: Dict[str, ToolAccess] = {}
    for program in programs:
        reads: set[str] = set()
        writes: set[str] = set()
        for table, kind in program.table_references():
            if table not in known:
                raise UnknownTableError(program.tool_name, table)
            (writes if kind == "write" else reads).add(table)
        access[program.tool_name] = ToolAccess(reads=frozenset(reads), writes=frozenset(writes))
    return ToolDbMapping(access=dict(sorted(access.items())))


def mapping_mismatches(declared: ToolDbMapping, derived: ToolDbMapping) -> List[str]:
    """Describe every tool whose declared table access differs from the derived one."""

    problems: List[str] = []
    for tool in sorted(set(declared.access) | set(derived.access)):
        if declared.reads(tool) != derived.reads(tool) or declared.writes(tool) != derived.writes(tool):
            problems.append(
                f"mapping for tool '{tool}' declares reads={sorted(declared.reads(tool))} "
                f"writes={sorted(declared.writes(tool))} but its program reads={sorted(derived.reads(tool))} "
                f"writes={sorted(derived.writes(tool))}"
            )
    return problems


__all__ = [
    "ColumnSpec",
    "DATETIME_FORMAT",
    "DatabaseSchema",
    "DeclaredException",
    "DomainFoundation",
    "DomainSyntaxError",
    "DomainValidationError",
    "ForeignKey",
    "INVALID_ARGUMENT",
    "POLICIES",
    "ParamSpec",
    "ReturnField",
    "RewardSpec",
    "SEMANTIC_TYPES",
    "TableSchema",
    "ToolAccess",
    "ToolDbMapping",
    "ToolSchema",
    "UnknownTableError",
    "conforms",
    "derive_mapping",
    "is_datetime_text",
    "is_identifier",
    "mapping_mismatches",
    "normalise_value",
    "validate_domain",
]
