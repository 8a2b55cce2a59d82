"""Parser for the declarative tool-effect language (``tools/<name>.effect`` files).

A program is a list of newline-separated statements::

    let interview = get interview_schedule[$interview_id]
    require interview != null else NotFound "Interview {interview_id} does not exist"
    insert interview_feedback {feedback_id: gen_id("FEEDBACK-"), interview_id: $interview_id} as row
    return {feedback_id: row.feedback_id}

Newlines inside brackets are ignored and ``#`` starts a comment.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

from core.schema import DatabaseSchema, TableSchema, ToolSchema

BUILTIN_ARITY: Dict[str, Tuple[int, Optional[int]]] = {
    "len": (1, 1),
    "first": (1, 1),
    "now": (0, 0),
    "gen_id": (1, 1),
    "keys": (1, 1),
    "coalesce": (1, None),
}

_KEYWORDS = {
    "let", "get", "find", "where", "require", "else", "insert", "as", "update", "delete", "return",
    "and", "or", "not", "in", "contains", "true", "false", "null", "exists",
}

_TOKEN_SPEC = [
    ("NEWLINE", r"\n"),
    ("SKIP", r"[ \t\r]+"),
    ("COMMENT", r"#[^\n]*"),
    ("STRING", r'"(?:[^"\\\n]|\\.)*"'),
    ("NUMBER", r"\d+(?:\.\d+)?"),
    ("PARAM", r"\$[A-Za-z_][A-Za-z0-9_]*"),
    ("NAME", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("OP", r"==|!=|<=|>=|[-+*/<>()\[\]{}.,:=]"),
    ("MISMATCH", r"."),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in _TOKEN_SPEC))


class EffectSyntaxError(ValueError):
    """Raised when program text does not follow the effect grammar."""

    def __init__(self, message: str, *, line: int, column: int) -> None:
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class EffectSemanticError(ValueError):
    """Raised when a well-formed program breaks a semantic rule."""

    def __init__(self, tool: str, problems: Sequence[str]) -> None:
        self.tool = tool
        self.problems = list(problems)
        super().__init__(f"Effect program for '{tool}' is invalid: " + "; ".join(self.problems))


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Literal:
    value: Any


@dataclass(frozen=True)
class ParamRef:
    name: str


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class ColumnRef:
    name: str


@dataclass(frozen=True)
class FieldAccess:
    target: "Expr"
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: Tuple["Expr", ...]


@dataclass(frozen=True)
class ListLiteral:
    items: Tuple["Expr", ...]


@dataclass(frozen=True)
class Exists:
    table: str
    key: "Expr"


Expr = Union[Literal, ParamRef, VarRef, ColumnRef, FieldAccess, Unary, Binary, Call, ListLiteral, Exists]


@dataclass(frozen=True)
class Get:
    table: str
    key: Expr


@dataclass(frozen=True)
class Find:
    table: str
    predicate: Optional[Expr]


@dataclass(frozen=True)
class Require:
    condition: Expr
    exception: str
    message: Optional[str]
    line: int


@dataclass(frozen=True)
class Let:
    var: str
    source: Union[Get, Find]
    line: int


@dataclass(frozen=True)
class Insert:
    table: str
    fields: Tuple[Tuple[str, Expr], ...]
    bind: Optional[str]
    line: int


@dataclass(frozen=True)
class Update:
    table: str
    key: Expr
    fields: Tuple[Tuple[str, Expr], ...]
    line: int


@dataclass(frozen=True)
class Delete:
    table: str
    key: Expr
    line: int


@dataclass(frozen=True)
class Return:
    fields: Tuple[Tuple[str, Expr], ...]
    line: int


Statement = Union[Require, Let, Insert, Update, Delete, Return]


def _walk(expr: Expr) -> Iterator[Expr]:
    yield expr
    if isinstance(expr, FieldAccess):
        yield from _walk(expr.target)
    elif isinstance(expr, Unary):
        yield from _walk(expr.operand)
    elif isinstance(expr, Binary):
        yield from _walk(expr.left)
        yield from _walk(expr.right)
    elif isinstance(expr, Exists):
        yield from _walk(expr.key)
    elif isinstance(expr, (Call, ListLiteral)):
        for item in expr.args if isinstance(expr, Call) else expr.items:
            yield from _walk(item)


def statement_expressions(statement: "Statement") -> List[Expr]:
    if isinstance(statement, Require):
        return [statement.condition]
    if isinstance(statement, Let):
        source = statement.source
        if isinstance(source, Get):
            return [source.key]
        return [source.predicate] if source.predicate is not None else []
    if isinstance(statement, Update):
        return [statement.key, *(expr for _, expr in statement.fields)]
    if isinstance(statement, Delete):
        return [statement.key]
    return [expr for _, expr in statement.fields]


def uses_gen_id(expr: Expr) -> bool:
    return any(isinstance(node, Call) and node.func == "gen_id" for node in _walk(expr))


@dataclass(frozen=True)
class EffectProgram:
    """Parsed, semantically checked implementation of one tool."""

    tool_name: str
    statements: Tuple[Statement, ...]
    source: str = ""

    def table_references(self) -> Iterable[Tuple[str, str]]:
        for statement in self.statements:
            if isinstance(statement, Let):
                yield statement.source.table, "read"
            elif isinstance(statement, (Insert, Update, Delete)):
                yield statement.table, "write"
            for expr in statement_expressions(statement):
                for node in _walk(expr):
                    if isinstance(node, Exists):
                        yield node.table, "read"

    def generated_columns(self) -> Set[Tuple[str, str]]:
        """``(table, column)`` pairs whose inserted value comes from ``gen_id``."""

        generated: Set[Tuple[str, str]] = set()
        for statement in self.statements:
            if isinstance(statement, Insert):
                for column, expr in statement.fields:
                    if uses_gen_id(expr):
                        generated.add((statement.table, column))
        return generated

    def raised_exceptions(self) -> Set[str]:
        return {statement.exception for statement in self.statements if isinstance(statement, Require)}

    @property
    def return_statement(self) -> Return:
        last = self.statements[-1]
        assert isinstance(last, Return)
        return last


# ------------------------------------------------------------------------ tokens


@dataclass(frozen=True)
class _Token:
    kind: str
    value: Any
    line: int
    column: int


def _tokenize(text: str) -> List[_Token]:
    tokens: List[_Token] = []
    depth = 0
    line, line_start = 1, 0
    for match in _TOKEN_RE.finditer(text):
        kind = match.lastgroup or "MISMATCH"
        raw = match.group()
        column = match.start() - line_start + 1
        if kind == "NEWLINE":
            if depth == 0 and tokens and tokens[-1].kind != "NEWLINE":
                tokens.append(_Token("NEWLINE", "\n", line, column))
            line += 1
            line_start = match.end()
            continue
        if kind in {"SKIP", "COMMENT"}:
            continue
        if kind == "MISMATCH":
            raise EffectSyntaxError(f"Unexpected character {raw!r}", line=line, column=column)
        if kind == "STRING":
            try:
                value: Any = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise EffectSyntaxError(f"Bad string literal: {exc.msg}", line=line, column=column) from exc
        elif kind == "NUMBER":
            value = float(raw) if "." in raw else int(raw)
        elif kind == "PARAM":
            value = raw[1:]
        elif kind == "NAME" and raw in _KEYWORDS:
            kind, value = "KEYWORD", raw
        else:
            value = raw
        if kind == "OP" and raw in "([{":
            depth += 1
        elif kind == "OP" and raw in ")]}":
            depth = max(0, depth - 1)
        tokens.append(_Token(kind, value, line, column))
    if tokens and tokens[-1].kind != "NEWLINE":
        tokens.append(_Token("NEWLINE", "\n", line, 1))
    tokens.append(_Token("EOF", None, line + 1, 1))
    return tokens


# ------------------------------------------------------------------------ parser


class _Parser:
    def __init__(self, text: str) -> None:
        self._tokens = _tokenize(text)
        self._pos = 0

    # helpers -------------------------------------------------------------
    def _peek(self) -> _Token:
        return self._tokens[self._pos]

    def _advance(self) -> _Token:
        token = self._tokens[self._pos]
        self._pos += 1
        return token

    def _fail(self, message: str, token: Optional[_Token] = None) -> EffectSyntaxError:
        token = token or self._peek()
        found = "end of program" if token.kind == "EOF" else repr(token.value)
        return EffectSyntaxError(f"{message}, found {found}", line=token.line, column=token.column)

    def _check(self, kind: str, value: Any = None) -> bool:
        token = self._peek()
        return token.kind == kind and (value is None or token.value == value)

    def _accept(self, kind: str, value: Any = None) -> Optional[_Token]:
        if self._check(kind, value):
            return self._advance()
        return None

    def _expect(self, kind: str, value: Any = None, what: Optional[str] = None) -> _Token:
        token = self._accept(kind, value)
        if token is None:
            raise self._fail(f"Expected {what or value or kind.lower()}")
        return token

    def _name(self, what: str) -> str:
        return str(self._expect("NAME", what=what).value)

    # statements ----------------------------------------------------------
    def program(self) -> List[Statement]:
        statements: List[Statement] = []
        while self._accept("NEWLINE"):
            pass
        while not self._check("EOF"):
            statements.append(self._statement())
            if not self._check("EOF"):
                self._expect("NEWLINE", what="end of statement")
            while self._accept("NEWLINE"):
                pass
        return statements

    def _statement(self) -> Statement:
        token = self._peek()
        if token.kind != "KEYWORD":
            raise self._fail("Expected a statement keyword")
        keyword = token.value
        self._advance()
        if keyword == "let":
            var = self._name("variable name")
            self._expect("OP", "=")
            if self._accept("KEYWORD", "get"):
                table = self._name("table name")
                self._expect("OP", "[")
                key = self._expression()
                self._expect("OP", "]")
                return Let(var, Get(table, key), token.line)
            if self._accept("KEYWORD", "find"):
                table = self._name("table name")
                predicate = self._expression() if self._accept("KEYWORD", "where") else None
                return Let(var, Find(table, predicate), token.line)
            raise self._fail("Expected 'get' or 'find'")
        if keyword == "require":
            condition = self._expression()
            self._expect("KEYWORD", "else")
            exception = self._name("exception name")
            message_token = self._accept("STRING")
            return Require(condition, exception, message_token.value if message_token else None, token.line)
        if keyword == "insert":
            table = self._name("table name")
            fields = self._fields()
            bind = self._name("variable name") if self._accept("KEYWORD", "as") else None
            return Insert(table, fields, bind, token.line)
        if keyword == "update":
            table = self._name("table name")
            self._expect("OP", "[")
            key = self._expression()
            self._expect("OP", "]")
            return Update(table, key, self._fields(), token.line)
        if keyword == "delete":
            table = self._name("table name")
            self._expect("OP", "[")
            key = self._expression()
            self._expect("OP", "]")
            return Delete(table, key, token.line)
        if keyword == "return":
            return Return(self._fields(), token.line)
        raise self._fail("Expected a statement keyword", token)

    def _fields(self) -> Tuple[Tuple[str, Expr], ...]:
        self._expect("OP", "{")
        fields: List[Tuple[str, Expr]] = []
        if not self._check("OP", "}"):
            while True:
                name = self._name("field name")
                self._expect("OP", ":")
                fields.append((name, self._expression()))
                if not self._accept("OP", ","):
                    break
                if self._check("OP", "}"):
                    break
        self._expect("OP", "}")
        return tuple(fields)

    # expressions ---------------------------------------------------------
    def _expression(self) -> Expr:
        return self._or()

    def _or(self) -> Expr:
        left = self._and()
        while self._accept("KEYWORD", "or"):
            left = Binary("or", left, self._and())
        return left

    def _and(self) -> Expr:
        left = self._not()
        while self._accept("KEYWORD", "and"):
            left = Binary("and", left, self._not())
        return left

    def _not(self) -> Expr:
        if self._accept("KEYWORD", "not"):
            return Unary("not", self._not())
        return self._comparison()

    def _comparison(self) -> Expr:
        left = self._additive()
        token = self._peek()
        if token.kind == "OP" and token.value in {"==", "!=", "<", "<=", ">", ">="}:
            self._advance()
            return Binary(token.value, left, self._additive())
        if token.kind == "KEYWORD" and token.value in {"in", "contains"}:
            self._advance()
            return Binary(token.value, left, self._additive())
        return left

    def _additive(self) -> Expr:
        left = self._multiplicative()
        while self._peek().kind == "OP" and self._peek().value in {"+", "-"}:
            op = self._advance().value
            left = Binary(op, left, self._multiplicative())
        return left

    def _multiplicative(self) -> Expr:
        left = self._unary()
        while self._peek().kind == "OP" and self._peek().value in {"*", "/"}:
            op = self._advance().value
            left = Binary(op, left, self._unary())
        return left

    def _unary(self) -> Expr:
        if self._accept("OP", "-"):
            return Unary("-", self._unary())
        return self._postfix()

    def _postfix(self) -> Expr:
        expr = self._primary()
        while self._accept("OP", "."):
            expr = FieldAccess(expr, self._name("field name"))
        return expr

    def _primary(self) -> Expr:
        token = self._peek()
        if token.kind in {"NUMBER", "STRING"}:
            self._advance()
            return Literal(token.value)
        if token.kind == "KEYWORD" and token.value in {"true", "false", "null"}:
            self._advance()
            return Literal({"true": True, "false": False, "null": None}[token.value])
        if token.kind == "PARAM":
            self._advance()
            return ParamRef(token.value)
        if token.kind == "KEYWORD" and token.value == "exists":
            self._advance()
            table = self._name("table name")
            self._expect("OP", "[")
            key = self._expression()
            self._expect("OP", "]")
            return Exists(table, key)
        if token.kind == "OP" and token.value == ".":
            self._advance()
            return ColumnRef(self._name("column name"))
        if token.kind == "OP" and token.value == "(":
            self._advance()
            expr = self._expression()
            self._expect("OP", ")")
            return expr
        if token.kind == "OP" and token.value == "[":
            self._advance()
            items: List[Expr] = []
            if not self._check("OP", "]"):
                items.append(self._expression())
                while self._accept("OP", ","):
                    items.append(self._expression())
            self._expect("OP", "]")
            return ListLiteral(tuple(items))
        if token.kind == "NAME":
            self._advance()
            if self._accept("OP", "("):
                args: List[Expr] = []
                if not self._check("OP", ")"):
                    args.append(self._expression())
                    while self._accept("OP", ","):
                        args.append(self._expression())
                self._expect("OP", ")")
                return Call(token.value, tuple(args))
            return VarRef(token.value)
        raise self._fail("Expected an expression")


# ---------------------------------------------------------------- semantic checks


@dataclass(frozen=True)
class _Binding:
    kind: str  # "record" or "list"
    table: str


class _Checker:
    def __init__(self, tool: ToolSchema, database: DatabaseSchema) -> None:
        self.tool = tool
        self.database = database
        self.problems: List[str] = []
        self.bindings: Dict[str, _Binding] = {}

    def _table(self, name: str, line: int) -> Optional[TableSchema]:
        table = self.database.table(name)
        if table is None:
            self.problems.append(f"line {line}: unknown table '{name}'")
        return table

    def _expr(self, expr: Expr, line: int, *, row_table: Optional[TableSchema] = None, insert: bool = False) -> None:
        for node in _walk(expr):
            if isinstance(node, ParamRef) and self.tool.param(node.name) is None:
                self.problems.append(f"line {line}: unknown param '${node.name}'")
            elif isinstance(node, VarRef) and node.name not in self.bindings:
                self.problems.append(f"line {line}: unbound variable '{node.name}'")
            elif isinstance(node, Exists):
                self._table(node.table, line)
            elif isinstance(node, ColumnRef):
                if row_table is None:
                    self.problems.append(f"line {line}: column reference '.{node.name}' outside a find predicate")
                elif row_table.column(node.name) is None:
                    self.problems.append(f"line {line}: unknown column '{row_table.name}.{node.name}'")
            elif isinstance(node, FieldAccess) and isinstance(node.target, VarRef):
                binding = self.bindings.get(node.target.name)
                if binding is None:
                    continue
                if binding.kind == "list":
                    self.problems.append(f"line {line}: '{node.target.name}' is a list; use first() before '.{node.name}'")
                    continue
                table = self.database.table(binding.table)
                if table is not None and table.column(node.name) is None:
                    self.problems.append(f"line {line}: unknown column '{binding.table}.{node.name}'")
            elif isinstance(node, Call):
                arity = BUILTIN_ARITY.get(node.func)
                if arity is None:
                    self.problems.append(f"line {line}: unknown function '{node.func}'")
                    continue
                low, high = arity
                if len(node.args) < low or (high is not None and len(node.args) > high):
                    self.problems.append(f"line {line}: wrong number of arguments to {node.func}()")
                if node.func == "gen_id":
                    if not insert:
                        self.problems.append(f"line {line}: gen_id() is only allowed in insert fields")
                    if not (node.args and isinstance(node.args[0], Literal) and isinstance(node.args[0].value, str)):
                        self.problems.append(f"line {line}: gen_id() takes a string literal prefix")

    def _bind(self, name: str, binding: _Binding, line: int) -> None:
        if name in self.bindings:
            self.problems.append(f"line {line}: variable '{name}' is already bound")
        self.bindings[name] = binding

    def _fields(self, table: Optional[TableSchema], fields: Sequence[Tuple[str, Expr]], line: int, *, insert: bool) -> None:
        seen: Set[str] = set()
        for name, expr in fields:
            if name in seen:
                self.problems.append(f"line {line}: field '{name}' given twice")
            seen.add(name)
            if table is not None and table.column(name) is None:
                self.problems.append(f"line {line}: unknown column '{table.name}.{name}'")
            self._expr(expr, line, insert=insert)

    def check(self, statements: Sequence[Statement]) -> None:
        returns = [index for index, statement in enumerate(statements) if isinstance(statement, Return)]
        if not returns:
            self.problems.append("missing return statement")
        elif len(returns) > 1:
            self.problems.append("more than one return statement")
        elif returns[0] != len(statements) - 1:
            self.problems.append("return must be the last statement")

        for statement in statements:
            line = statement.line
            if isinstance(statement, Require):
                self._expr(statement.condition, line)
                if statement.exception not in self.tool.exception_names:
                    self.problems.append(f"line {line}: exception '{statement.exception}' is not declared by '{self.tool.name}'")
            elif isinstance(statement, Let):
                source = statement.source
                table = self._table(source.table, line)
                if isinstance(source, Get):
                    self._expr(source.key, line)
                    self._bind(statement.var, _Binding("record", source.table), line)
                else:
                    if source.predicate is not None:
                        self._expr(source.predicate, line, row_table=table)
                    self._bind(statement.var, _Binding("list", source.table), line)
            elif isinstance(statement, Insert):
                table = self._table(statement.table, line)
                self._fields(table, statement.fields, line, insert=True)
                if table is not None and table.primary_key not in {name for name, _ in statement.fields}:
                    self.problems.append(f"line {line}: insert into '{table.name}' must set primary key '{table.primary_key}'")
                if statement.bind:
                    self._bind(statement.bind, _Binding("record", statement.table), line)
            elif isinstance(statement, Update):
                table = self._table(statement.table, line)
                self._expr(statement.key, line)
                self._fields(table, statement.fields, line, insert=False)
                if table is not None and table.primary_key in {name for name, _ in statement.fields}:
                    self.problems.append(f"line {line}: update may not change primary key '{table.primary_key}'")
            elif isinstance(statement, Delete):
                self._table(statement.table, line)
                self._expr(statement.key, line)
            elif isinstance(statement, Return):
                self._fields(None, statement.fields, line, insert=False)
                declared = {item.name for item in self.tool.returns}
                given = {name for name, _ in statement.fields}
                for name in sorted(declared - given):
                    self.problems.append(f"line {line}: return is missing declared field '{name}'")
                for name in sorted(given - declared):
                    self.problems.append(f"line {line}: return field '{name}' is not declared by '{self.tool.name}'")


def parse_effect_program(text: str, tool: ToolSchema, database: DatabaseSchema) -> EffectProgram:
    """Parse and check ``text`` as the implementation of ``tool``."""

    statements = _Parser(text).program()
    checker = _Checker(tool, database)
    checker.check(statements)
    if checker.problems:
        raise EffectSemanticError(tool.name, checker.problems)
    return EffectProgram(tool_name=tool.name, statements=tuple(statements), source=text)


__all__ = [
    "Binary",
    "Call",
    "ColumnRef",
    "Delete",
    "EffectProgram",
    "Exists",
    "EffectSemanticError",
    "EffectSyntaxError",
    "FieldAccess",
    "Find",
    "Get",
    "Insert",
    "Let",
    "ListLiteral",
    "Literal",
    "ParamRef",
    "Require",
    "Return",
    "Unary",
    "Update",
    "VarRef",
    "parse_effect_program",
    "statement_expressions",
    "uses_gen_id",
]
