"""Canonical text form of domain foundations (``domain.env`` documents)."""

from __future__ import annotations

import json
from typing import Any, Dict, List, Mapping

from core.schema import (
    DEFAULT_SEMANTIC_THRESHOLD,
    ColumnSpec,
    DatabaseSchema,
    DeclaredException,
    DomainFoundation,
    DomainSyntaxError,
    DomainValidationError,
    ForeignKey,
    ParamSpec,
    ReturnField,
    RewardSpec,
    TableSchema,
    ToolAccess,
    ToolDbMapping,
    ToolSchema,
    validate_domain,
)


def canonical_json(payload: Any) -> str:
    """Serialise ``payload`` the one way every envforge artefact is written."""

    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _decode(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainSyntaxError(exc.msg, line=exc.lineno, column=exc.colno) from exc


def _as_list(node: Any, path: str, violations: List[str]) -> List[Any]:
    if node is None:
        return []
    if not isinstance(node, list):
        violations.append(f"{path}: expected a list")
        return []
    return node


def _as_map(node: Any, path: str, violations: List[str]) -> Mapping[str, Any]:
    if node is None:
        return {}
    if not isinstance(node, dict):
        violations.append(f"{path}: expected an object")
        return {}
    return node


def _text(node: Mapping[str, Any], key: str, path: str, violations: List[str], *, default: str | None = None) -> str:
    value = node.get(key, default)
    if not isinstance(value, str):
        violations.append(f"{path}.{key}: expected a string")
        return ""
    return value


def _flag(node: Mapping[str, Any], key: str, path: str, violations: List[str], *, default: bool) -> bool:
    value = node.get(key, default)
    if not isinstance(value, bool):
        violations.append(f"{path}.{key}: expected a boolean")
        return default
    return value


def _to_tool(node: Any, index: int, violations: List[str]) -> ToolSchema | None:
    path = f"tools[{index}]"
    if not isinstance(node, dict):
        violations.append(f"{path}: expected an object")
        return None
    params = []
    for pos, raw in enumerate(_as_list(node.get("params"), f"{path}.params", violations)):
        where = f"{path}.params[{pos}]"
        raw = _as_map(raw, where, violations)
        params.append(
            ParamSpec(
                name=_text(raw, "name", where, violations),
                type=_text(raw, "type", where, violations),
                required=_flag(raw, "required", where, violations, default=True),
                description=_text(raw, "description", where, violations, default=""),
            )
        )
    returns = []
    for pos, raw in enumerate(_as_list(node.get("returns"), f"{path}.returns", violations)):
        where = f"{path}.returns[{pos}]"
        raw = _as_map(raw, where, violations)
        returns.append(ReturnField(name=_text(raw, "name", where, violations), type=_text(raw, "type", where, violations)))
    exceptions = []
    for pos, raw in enumerate(_as_list(node.get("declared_exceptions"), f"{path}.declared_exceptions", violations)):
        where = f"{path}.declared_exceptions[{pos}]"
        raw = _as_map(raw, where, violations)
        exceptions.append(
            DeclaredException(
                name=_text(raw, "name", where, violations),
                message=_text(raw, "message", where, violations, default=""),
            )
        )
    preconditions = [str(token) for token in _as_list(node.get("preconditions"), f"{path}.preconditions", violations)]
    postconditions = [str(token) for token in _as_list(node.get("postconditions"), f"{path}.postconditions", violations)]
    return ToolSchema(
        name=_text(node, "name", path, violations),
        description=_text(node, "description", path, violations, default=""),
        params=tuple(sorted(params, key=lambda item: item.name)),
        returns=tuple(sorted(returns, key=lambda item: item.name)),
        preconditions=tuple(sorted(preconditions)),
        postconditions=tuple(sorted(postconditions)),
        declared_exceptions=tuple(sorted(exceptions, key=lambda item: item.name)),
    )


def _to_table(node: Any, index: int, violations: List[str]) -> TableSchema | None:
    path = f"database.tables[{index}]"
    if not isinstance(node, dict):
        violations.append(f"{path}: expected an object")
        return None
    columns = []
    for pos, raw in enumerate(_as_list(node.get("columns"), f"{path}.columns", violations)):
        where = f"{path}.columns[{pos}]"
        raw = _as_map(raw, where, violations)
        columns.append(
            ColumnSpec(
                name=_text(raw, "name", where, violations),
                type=_text(raw, "type", where, violations),
                nullable=_flag(raw, "nullable", where, violations, default=False),
                default=raw.get("default"),
            )
        )
    foreign_keys = []
    for pos, raw in enumerate(_as_list(node.get("foreign_keys"), f"{path}.foreign_keys", violations)):
        where = f"{path}.foreign_keys[{pos}]"
        raw = _as_map(raw, where, violations)
        reference = _text(raw, "references", where, violations)
        table, _, target = reference.partition(".")
        if not table or not target:
            violations.append(f"{where}.references: expected 'table.column', got '{reference}'")
        foreign_keys.append(ForeignKey(column=_text(raw, "column", where, violations), table=table, target_column=target))
    return TableSchema(
        name=_text(node, "name", path, violations),
        primary_key=_text(node, "primary_key", path, violations),
        columns=tuple(sorted(columns, key=lambda item: item.name)),
        foreign_keys=tuple(sorted(foreign_keys, key=lambda item: item.column)),
    )


def _to_mapping(node: Any, violations: List[str]) -> ToolDbMapping:
    access: Dict[str, ToolAccess] = {}
    for tool_name, raw in sorted(_as_map(node, "mapping", violations).items()):
        where = f"mapping.{tool_name}"
        raw = _as_map(raw, where, violations)
        reads = [str(name) for name in _as_list(raw.get("reads"), f"{where}.reads", violations)]
        writes = [str(name) for name in _as_list(raw.get("writes"), f"{where}.writes", violations)]
        access[tool_name] = ToolAccess(reads=frozenset(reads), writes=frozenset(writes))
    return ToolDbMapping(access=access)


def _to_reward_spec(node: Any, violations: List[str]) -> RewardSpec:
    raw = _as_map(node, "reward_policies", violations)
    threshold = raw.get("semantic_threshold", DEFAULT_SEMANTIC_THRESHOLD)
    if isinstance(threshold, bool) or not isinstance(threshold, (int, float)):
        violations.append("reward_policies.semantic_threshold: expected a number")
        threshold = DEFAULT_SEMANTIC_THRESHOLD
    policies: Dict[str, Dict[str, str]] = {}
    for table, columns in sorted(_as_map(raw.get("policies"), "reward_policies.policies", violations).items()):
        columns = _as_map(columns, f"reward_policies.policies.{table}", violations)
        policies[table] = {str(column): str(policy) for column, policy in sorted(columns.items())}
    return RewardSpec(policies=policies, semantic_threshold=float(threshold))


def reward_spec_from_payload(payload: Any) -> RewardSpec:
    """Parse a standalone reward policy document (as written to ``reward.spec``)."""

    violations: List[str] = []
    spec = _to_reward_spec(payload, violations)
    if violations:
        raise DomainValidationError(violations)
    return spec


def reward_spec_to_payload(spec: RewardSpec) -> Dict[str, Any]:
    return {
        "semantic_threshold": spec.semantic_threshold,
        "policies": {table: dict(sorted(columns.items())) for table, columns in sorted(spec.policies.items())},
    }


def domain_from_payload(payload: Any) -> DomainFoundation:
    """Build and validate a foundation from an already decoded document."""

    violations: List[str] = []
    root = _as_map(payload, "domain", violations)
    domain_name = root.get("domain_name")
    if not isinstance(domain_name, str):
        violations.append("domain_name: expected a string")
        domain_name = ""

    tools = [_to_tool(node, index, violations) for index, node in enumerate(_as_list(root.get("tools"), "tools", violations))]
    database = _as_map(root.get("database"), "database", violations)
    tables = [
        _to_table(node, index, violations)
        for index, node in enumerate(_as_list(database.get("tables"), "database.tables", violations))
    ]
    domain = DomainFoundation(
        domain_name=domain_name,
        tools=tuple(sorted((tool for tool in tools if tool is not None), key=lambda item: item.name)),
        database=DatabaseSchema(tables=tuple(sorted((t for t in tables if t is not None), key=lambda item: item.name))),
        mapping=_to_mapping(root.get("mapping"), violations),
        reward_policies=_to_reward_spec(root.get("reward_policies"), violations),
    )
    violations.extend(validate_domain(domain))
    if violations:
        raise DomainValidationError(violations)
    return domain


def parse_domain(text: str) -> DomainFoundation:
    """Parse a canonical domain document into a validated :class:`DomainFoundation`."""

    return domain_from_payload(_decode(text))


def tool_to_payload(tool: ToolSchema) -> Dict[str, Any]:
    return {
        "name": tool.name,
        "description": tool.description,
        "params": [
            {"name": p.name, "type": p.type, "required": p.required, "description": p.description}
            for p in sorted(tool.params, key=lambda item: item.name)
        ],
        "returns": [{"name": r.name, "type": r.type} for r in sorted(tool.returns, key=lambda item: item.name)],
        "preconditions": sorted(tool.preconditions),
        "postconditions": sorted(tool.postconditions),
        "declared_exceptions": [
            {"name": e.name, "message": e.message}
            for e in sorted(tool.declared_exceptions, key=lambda item: item.name)
        ],
    }


def table_to_payload(table: TableSchema) -> Dict[str, Any]:
    return {
        "name": table.name,
        "primary_key": table.primary_key,
        "columns": [
            {"name": c.name, "type": c.type, "nullable": c.nullable, "default": c.default}
            for c in sorted(table.columns, key=lambda item: item.name)
        ],
        "foreign_keys": [
            {"column": fk.column, "references": fk.reference}
            for fk in sorted(table.foreign_keys, key=lambda item: item.column)
        ],
    }


def domain_to_payload(domain: DomainFoundation) -> Dict[str, Any]:
    tools = [tool_to_payload(tool) for tool in sorted(domain.tools, key=lambda item: item.name)]
    tables = [table_to_payload(table) for table in sorted(domain.database.tables, key=lambda item: item.name)]
    mapping = {
        tool: {"reads": sorted(entry.reads), "writes": sorted(entry.writes)}
        for tool, entry in sorted(domain.mapping.access.items())
    }
    return {
        "domain_name": domain.domain_name,
        "database": {"tables": tables},
        "tools": tools,
        "mapping": mapping,
        "reward_policies": reward_spec_to_payload(domain.reward_policies),
    }


def serialize_domain(domain: DomainFoundation) -> str:
    """Render ``domain`` canonically: sorted keys and entries, two-space indent, trailing newline."""

    return canonical_json(domain_to_payload(domain))


__all__ = [
    "canonical_json",
    "domain_from_payload",
    "domain_to_payload",
    "parse_domain",
    "reward_spec_from_payload",
    "reward_spec_to_payload",
    "serialize_domain",
    "table_to_payload",
    "tool_to_payload",
]
