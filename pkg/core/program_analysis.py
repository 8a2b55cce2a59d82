"""Static facts about effect programs: how each parameter is used against the database."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Optional

from core.effect_language import (
    Binary,
    Call,
    ColumnRef,
    Delete,
    EffectProgram,
    Exists,
    FieldAccess,
    Find,
    Get,
    Insert,
    Let,
    ListLiteral,
    ParamRef,
    Unary,
    Update,
    statement_expressions,
)
from core.schema import DatabaseSchema

CREATE = "create"
LOOKUP = "lookup"
MATCH = "match"
CONTAINS = "contains"
SET = "set"

_PRIORITY = {CREATE: 0, LOOKUP: 1, MATCH: 2, CONTAINS: 2, SET: 3}


@dataclass(frozen=True)
class ParamRole:
    """How a program uses one parameter: the operation and the column it lands on."""

    op: str
    table: str
    column: str

    def to_dict(self) -> Dict[str, str]:
        return {"op": self.op, "table": self.table, "column": self.column}


def _nodes(expr) -> Iterator:
    yield expr
    if isinstance(expr, FieldAccess):
        yield from _nodes(expr.target)
    elif isinstance(expr, Unary):
        yield from _nodes(expr.operand)
    elif isinstance(expr, Binary):
        yield from _nodes(expr.left)
        yield from _nodes(expr.right)
    elif isinstance(expr, Exists):
        yield from _nodes(expr.key)
    elif isinstance(expr, Call):
        for item in expr.args:
            yield from _nodes(item)
    elif isinstance(expr, ListLiteral):
        for item in expr.items:
            yield from _nodes(item)


def param_roles(program: EffectProgram, database: DatabaseSchema) -> Dict[str, ParamRole]:
    """Strongest role per parameter (create, then lookup, then match/contains, then set)."""

    roles: Dict[str, ParamRole] = {}

    def note(param: str, op: str, table: str, column: str) -> None:
        current = roles.get(param)
        if current is None or _PRIORITY[op] < _PRIORITY[current.op]:
            roles[param] = ParamRole(op, table, column)

    def primary_key(table: str) -> str:
        schema = database.table(table)
        return schema.primary_key if schema else ""

    def scan(expr, row_table: Optional[str]) -> None:
        for node in _nodes(expr):
            if isinstance(node, Exists) and isinstance(node.key, ParamRef):
                note(node.key.name, LOOKUP, node.table, primary_key(node.table))
            if row_table is None or not isinstance(node, Binary):
                continue
            left, right = node.left, node.right
            if node.op == "==" and isinstance(right, ColumnRef) and isinstance(left, ParamRef):
                left, right = right, left
            if not (isinstance(left, ColumnRef) and isinstance(right, ParamRef)):
                continue
            if node.op == "==":
                op = LOOKUP if left.name == primary_key(row_table) else MATCH
                note(right.name, op, row_table, left.name)
            elif node.op == "in":
                op = LOOKUP if left.name == primary_key(row_table) else MATCH
                note(right.name, op, row_table, left.name)
            elif node.op == "contains":
                note(right.name, CONTAINS, row_table, left.name)

    for statement in program.statements:
        if isinstance(statement, Let):
            source = statement.source
            if isinstance(source, Get) and isinstance(source.key, ParamRef):
                note(source.key.name, LOOKUP, source.table, primary_key(source.table))
            elif isinstance(source, Find) and source.predicate is not None:
                scan(source.predicate, source.table)
                continue
        elif isinstance(statement, (Update, Delete)) and isinstance(statement.key, ParamRef):
            note(statement.key.name, LOOKUP, statement.table, primary_key(statement.table))
        if isinstance(statement, (Insert, Update)):
            schema = database.table(statement.table)
            for column, expr in statement.fields:
                if not isinstance(expr, ParamRef) or schema is None:
                    continue
                fk = schema.foreign_key(column)
                if isinstance(statement, Insert) and column == schema.primary_key:
                    note(expr.name, CREATE, statement.table, column)
                elif fk is not None:
                    note(expr.name, LOOKUP, fk.table, fk.target_column)
                else:
                    note(expr.name, SET, statement.table, column)
        for expr in statement_expressions(statement):
            scan(expr, None)
    return dict(sorted(roles.items()))


def all_param_roles(programs: Mapping[str, EffectProgram], database: DatabaseSchema) -> Dict[str, Dict[str, ParamRole]]:
    return {name: param_roles(programs[name], database) for name in sorted(programs)}


def generated_field_names(programs: Mapping[str, EffectProgram]) -> frozenset[str]:
    """Column names whose values some program produces with ``gen_id``."""

    return frozenset(column for program in programs.values() for _, column in program.generated_columns())


__all__ = [
    "CONTAINS",
    "CREATE",
    "LOOKUP",
    "MATCH",
    "ParamRole",
    "SET",
    "all_param_roles",
    "generated_field_names",
    "param_roles",
]
