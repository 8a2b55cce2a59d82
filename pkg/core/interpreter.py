"""Transactional execution of effect programs against an :class:`EnvState`."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

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
    Literal,
    ParamRef,
    Require,
    Return,
    Unary,
    Update,
    VarRef,
)
from core.schema import INVALID_ARGUMENT, TableSchema, ToolSchema, conforms, normalise_value
from core.state import EnvState, StateDiff, check_integrity, complete_record, diff

logger = logging.getLogger(__name__)

SUCCESS = "Success"
REJECTION = "AnticipatedRejection"
FAILURE = "UnexpectedFailure"
GENERIC_FAILURE_TEXT = "Error: the tool failed to execute."


class EffectRuntimeError(RuntimeError):
    """A runtime condition the program did not guard against."""

    def __init__(self, error_class: str, detail: str) -> None:
        super().__init__(detail)
        self.error_class = error_class


class _Rejected(Exception):
    def __init__(self, name: str, message: str) -> None:
        super().__init__(message)
        self.name = name
        self.message = message


class _SafeFormatDict(dict):
    """Dict that leaves unknown template fields untouched."""

    def __missing__(self, key: str) -> str:
        return "{" + key + "}"


@dataclass(frozen=True)
class ToolOutcome:
    """Result of one tool call: Success, AnticipatedRejection or UnexpectedFailure."""

    variant: str
    result: Optional[Dict[str, Any]] = None
    diff: Optional[StateDiff] = None
    error_name: str = ""
    message: str = ""
    lookup_misses: Tuple[Tuple[str, Any], ...] = ()

    @property
    def is_success(self) -> bool:
        return self.variant == SUCCESS

    @property
    def is_rejection(self) -> bool:
        return self.variant == REJECTION

    @property
    def is_failure(self) -> bool:
        return self.variant == FAILURE

    def render(self) -> str:
        """Text the agent observes for this outcome."""

        if self.variant == SUCCESS:
            return json.dumps(self.result or {}, sort_keys=True, ensure_ascii=False)
        if self.variant == REJECTION:
            return f"{self.error_name}: {self.message}"
        return GENERIC_FAILURE_TEXT

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"variant": self.variant}
        if self.variant == SUCCESS:
            payload["result"] = self.result
            payload["diff"] = self.diff.to_dict() if self.diff else None
        else:
            payload["error_name"] = self.error_name
            payload["message"] = self.message
        return payload


class RowList(list):
    """List of records returned by ``find``; remembers its table."""

    def __init__(self, table: TableSchema, rows: List[Dict[str, Any]]) -> None:
        super().__init__(rows)
        self.table = table


def _format(template: str, args: Mapping[str, Any]) -> str:
    context = _SafeFormatDict({key: "" if value is None else str(value) for key, value in args.items()})
    try:
        return template.format_map(context)
    except (ValueError, IndexError, AttributeError):
        return template


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def check_arguments(tool: ToolSchema, args: Any) -> Tuple[Dict[str, Any], Optional[str]]:
    """Return the bound parameter map, or an explanation of why ``args`` are invalid."""

    if not isinstance(args, Mapping):
        return {}, "arguments must be an object"
    for name in sorted(args):
        if tool.param(name) is None:
            return {}, f"unexpected argument '{name}'"
    bound: Dict[str, Any] = {}
    for spec in tool.params:
        value = args.get(spec.name)
        if value is None:
            if spec.required:
                return {}, f"missing required argument '{spec.name}'"
            bound[spec.name] = None
            continue
        if not conforms(value, spec.type):
            return {}, f"argument '{spec.name}' must be a {spec.type}"
        bound[spec.name] = normalise_value(value, spec.type) if spec.type == "list-of-string" else value
    return bound, None


class _Execution:
    def __init__(self, working: EnvState, tool: ToolSchema, params: Dict[str, Any]) -> None:
        self.working = working
        self.tool = tool
        self.params = params
        self.vars: Dict[str, Any] = {}
        self.misses: List[Tuple[str, Any]] = []
        self._insert_table: Optional[str] = None

    # lookups -------------------------------------------------------------
    def _table(self, name: str) -> TableSchema:
        table = self.working.database.table(name)
        if table is None:
            raise EffectRuntimeError("UnknownTable", f"table '{name}' does not exist")
        return table

    def _column(self, table: TableSchema, column: str):
        spec = table.column(column)
        if spec is None:
            raise EffectRuntimeError("UnknownColumn", f"column '{table.name}.{column}' does not exist")
        return spec

    # expressions ---------------------------------------------------------
    def eval(self, expr: Any, row: Optional[Dict[str, Any]] = None) -> Any:
        if isinstance(expr, Literal):
            return expr.value
        if isinstance(expr, ParamRef):
            return self.params.get(expr.name)
        if isinstance(expr, VarRef):
            return self.vars[expr.name]
        if isinstance(expr, ColumnRef):
            if row is None or expr.name not in row:
                raise EffectRuntimeError("UnknownColumn", f"column '{expr.name}' is not available")
            return row[expr.name]
        if isinstance(expr, FieldAccess):
            target = self.eval(expr.target, row)
            if target is None:
                raise EffectRuntimeError("NullReference", f"cannot read '{expr.name}' of null")
            if not isinstance(target, dict) or expr.name not in target:
                raise EffectRuntimeError("UnknownColumn", f"value has no field '{expr.name}'")
            return target[expr.name]
        if isinstance(expr, Exists):
            key = self.eval(expr.key, row)
            found = key in self.working.tables.get(self._table(expr.table).name, {})
            if not found:
                self.misses.append((expr.table, key))
            return found
        if isinstance(expr, Unary):
            value = self.eval(expr.operand, row)
            if expr.op == "not":
                if not isinstance(value, bool):
                    raise EffectRuntimeError("TypeError", "'not' needs a boolean")
                return not value
            if not _is_number(value):
                raise EffectRuntimeError("TypeError", "unary '-' needs a number")
            return -value
        if isinstance(expr, Binary):
            return self._binary(expr, row)
        if isinstance(expr, Call):
            return self._call(expr, row)
        if isinstance(expr, ListLiteral):
            return [self.eval(item, row) for item in expr.items]
        raise EffectRuntimeError("TypeError", f"unsupported expression {type(expr).__name__}")

    def _binary(self, expr: Binary, row: Optional[Dict[str, Any]]) -> Any:
        op = expr.op
        if op in {"and", "or"}:
            left = self.eval(expr.left, row)
            if not isinstance(left, bool):
                raise EffectRuntimeError("TypeError", f"'{op}' needs booleans")
            if (op == "and" and not left) or (op == "or" and left):
                return left
            right = self.eval(expr.right, row)
            if not isinstance(right, bool):
                raise EffectRuntimeError("TypeError", f"'{op}' needs booleans")
            return right

        left = self.eval(expr.left, row)
        right = self.eval(expr.right, row)
        if op in {"==", "!="}:
            equal = left == right and isinstance(left, bool) == isinstance(right, bool)
            return equal if op == "==" else not equal
        if op in {"<", "<=", ">", ">="}:
            comparable = (_is_number(left) and _is_number(right)) or (isinstance(left, str) and isinstance(right, str))
            if not comparable:
                raise EffectRuntimeError("TypeError", f"cannot compare {left!r} {op} {right!r}")
            return {"<": left < right, "<=": left <= right, ">": left > right, ">=": left >= right}[op]
        if op == "in":
            if not isinstance(right, list):
                raise EffectRuntimeError("TypeError", "'in' needs a list on the right")
            return left in right
        if op == "contains":
            if left is None:
                return False
            if isinstance(left, list):
                return right in left
            if isinstance(left, str) and isinstance(right, str):
                return right.casefold() in left.casefold()
            raise EffectRuntimeError("TypeError", "'contains' needs text or a list on the left")
        if op == "+":
            if _is_number(left) and _is_number(right):
                return left + right
            if isinstance(left, str) and isinstance(right, str):
                return left + right
            if isinstance(left, list) and isinstance(right, list):
                return list(left) + list(right)
            raise EffectRuntimeError("TypeError", f"cannot add {left!r} and {right!r}")
        if not (_is_number(left) and _is_number(right)):
            raise EffectRuntimeError("TypeError", f"'{op}' needs numbers")
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        if right == 0:
            raise EffectRuntimeError("ZeroDivision", "division by zero")
        return left / right

    def _call(self, expr: Call, row: Optional[Dict[str, Any]]) -> Any:
        if expr.func == "now":
            return self.working.now()
        if expr.func == "gen_id":
            if self._insert_table is None:
                raise EffectRuntimeError("TypeError", "gen_id() outside insert")
            prefix = self.eval(expr.args[0], row)
            return self.working.next_id(self._insert_table, str(prefix))
        args = [self.eval(arg, row) for arg in expr.args]
        if expr.func == "coalesce":
            return next((value for value in args if value is not None), None)
        value = args[0]
        if expr.func == "len":
            if not isinstance(value, (list, str)):
                raise EffectRuntimeError("TypeError", "len() needs a list or text")
            return len(value)
        if expr.func == "first":
            if not isinstance(value, list):
                raise EffectRuntimeError("TypeError", "first() needs a list")
            return value[0] if value else None
        if expr.func == "keys":
            if not isinstance(value, RowList):
                raise EffectRuntimeError("TypeError", "keys() needs a find result")
            return [item[value.table.primary_key] for item in value]
        raise EffectRuntimeError("TypeError", f"unknown function '{expr.func}'")

    # statements ----------------------------------------------------------
    def _values(self, table: TableSchema, fields, *, inserting: bool) -> Dict[str, Any]:
        values: Dict[str, Any] = {}
        self._insert_table = table.name if inserting else None
        try:
            for column, expr in fields:
                spec = self._column(table, column)
                value = self.eval(expr)
                if value is None:
                    if not spec.nullable:
                        raise EffectRuntimeError("NullViolation", f"'{table.name}.{column}' cannot be null")
                elif not conforms(value, spec.type):
                    raise EffectRuntimeError("TypeViolation", f"{value!r} is not a valid {spec.type} for '{table.name}.{column}'")
                values[column] = normalise_value(value, spec.type)
        finally:
            self._insert_table = None
        return values

    def _keys(self, value: Any) -> List[Any]:
        return list(value) if isinstance(value, list) else [value]

    def run(self, program: EffectProgram) -> Dict[str, Any]:
        for statement in program.statements:
            if isinstance(statement, Require):
                verdict = self.eval(statement.condition)
                if not isinstance(verdict, bool):
                    raise EffectRuntimeError("TypeError", f"line {statement.line}: require needs a boolean")
                if not verdict:
                    declared = self.tool.exception(statement.exception)
                    template = statement.message or (declared.message if declared else statement.exception)
                    raise _Rejected(statement.exception, _format(template, self.params))
            elif isinstance(statement, Let):
                source = statement.source
                table = self._table(source.table)
                rows = self.working.tables.get(table.name, {})
                if isinstance(source, Get):
                    key = self.eval(source.key)
                    record = rows.get(key)
                    if record is None:
                        self.misses.append((table.name, key))
                    self.vars[statement.var] = dict(record) if record is not None else None
                else:
                    matches = []
                    for record in self.working.records(table.name):
                        if source.predicate is None:
                            matches.append(dict(record))
                            continue
                        keep = self.eval(source.predicate, record)
                        if not isinstance(keep, bool):
                            raise EffectRuntimeError("TypeError", f"line {statement.line}: find predicate needs a boolean")
                        if keep:
                            matches.append(dict(record))
                    self.vars[statement.var] = RowList(table, matches)
            elif isinstance(statement, Insert):
                table = self._table(statement.table)
                values = self._values(table, statement.fields, inserting=True)
                record = complete_record(table, values)
                key = record.get(table.primary_key)
                if key is None:
                    raise EffectRuntimeError("NullViolation", f"insert into '{table.name}' has no primary key")
                rows = self.working.table(table.name)
                if key in rows:
                    raise EffectRuntimeError("DuplicateKey", f"{table.name}[{key!r}] already exists")
                rows[key] = record
                if statement.bind:
                    self.vars[statement.bind] = dict(record)
            elif isinstance(statement, Update):
                table = self._table(statement.table)
                keys = self._keys(self.eval(statement.key))
                values = self._values(table, statement.fields, inserting=False)
                rows = self.working.table(table.name)
                for key in keys:
                    if key not in rows:
                        raise EffectRuntimeError("MissingRecord", f"{table.name}[{key!r}] does not exist")
                    rows[key].update(values)
            elif isinstance(statement, Delete):
                table = self._table(statement.table)
                rows = self.working.table(table.name)
                for key in self._keys(self.eval(statement.key)):
                    if key not in rows:
                        raise EffectRuntimeError("MissingRecord", f"{table.name}[{key!r}] does not exist")
                    del rows[key]
            elif isinstance(statement, Return):
                return self._result(statement)
        raise EffectRuntimeError("MissingReturn", "program ended without return")

    def _result(self, statement: Return) -> Dict[str, Any]:
        result: Dict[str, Any] = {}
        for name, expr in statement.fields:
            value = self.eval(expr)
            declared = self.tool.return_field(name)
            if declared is None:
                raise EffectRuntimeError("TypeViolation", f"return field '{name}' is not declared")
            if isinstance(value, RowList) and declared.type == "list-of-string":
                value = [str(item[value.table.primary_key]) for item in value]
            if value is not None and not conforms(value, declared.type):
                raise EffectRuntimeError("TypeViolation", f"return field '{name}' is not a valid {declared.type}")
            result[name] = normalise_value(value, declared.type)
        return result


def execute_tool(state: EnvState, tool: ToolSchema, program: EffectProgram, args: Any) -> ToolOutcome:
    """Run ``program`` for ``tool`` on ``state``; only a Success changes ``state``."""

    params, problem = check_arguments(tool, args)
    if problem is not None:
        declared = tool.exception(INVALID_ARGUMENT)
        template = declared.message if declared else "Invalid argument: {detail}"
        message = _format(template, {"detail": problem})
        return ToolOutcome(REJECTION, error_name=INVALID_ARGUMENT, message=message)

    working = state.clone()
    execution = _Execution(working, tool, params)
    try:
        result = execution.run(program)
        violations = check_integrity(working)
        if violations:
            raise EffectRuntimeError("IntegrityError", "; ".join(str(item) for item in violations))
    except _Rejected as rejected:
        return ToolOutcome(
            REJECTION,
            error_name=rejected.name,
            message=rejected.message,
            lookup_misses=tuple(execution.misses),
        )
    except EffectRuntimeError as exc:
        logger.debug("[interpreter] %s failed with %s: %s", tool.name, exc.error_class, exc)
        return ToolOutcome(FAILURE, error_name=exc.error_class, message=str(exc), lookup_misses=tuple(execution.misses))
    except Exception as exc:  # every runtime condition becomes an outcome
        logger.debug("[interpreter] %s raised %s", tool.name, type(exc).__name__, exc_info=True)
        return ToolOutcome(FAILURE, error_name=type(exc).__name__, message=str(exc), lookup_misses=tuple(execution.misses))

    working.advance_clock()
    state_diff = diff(state, working)
    state.adopt(working)
    return ToolOutcome(SUCCESS, result=result, diff=state_diff, lookup_misses=tuple(execution.misses))


__all__ = [
    "EffectRuntimeError",
    "FAILURE",
    "GENERIC_FAILURE_TEXT",
    "REJECTION",
    "SUCCESS",
    "ToolOutcome",
    "check_arguments",
    "execute_tool",
]
