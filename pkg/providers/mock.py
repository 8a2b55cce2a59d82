"""Deterministic offline provider.

Every answer is a pure function of the request role, the request digest and the
sampling seed, so forge runs and episodes replay exactly without a network.
Tests can replace any role with a script: a callable receiving the request and
returning the completion text.
"""

from __future__ import annotations

import json
import logging
import random
import re
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from core.episode import DONE_SENTINEL, STOP_SENTINEL
from core.synthetic_values import ValueFactory, column_samples
from core.provider_service import (
    ProviderError,
    ProviderRequest,
    ProviderResponse,
    ProviderUsage,
    estimate_tokens,
)

logger = logging.getLogger(__name__)

Script = Callable[[ProviderRequest], str]

DONE_MARKER = DONE_SENTINEL
STOP_MARKER = STOP_SENTINEL

_COMPLETION_WORDS = ("completed", "done", "all set", "finished")


def _format_score(value: float) -> str:
    text = f"{value:.4f}".rstrip("0").rstrip(".")
    return text or "0"


def _prefer(candidates: Sequence[str], avoid: Set[str]) -> List[str]:
    kept = [name for name in candidates if name not in avoid]
    return kept or list(candidates)


class MockProvider:
    """Offline provider that answers each role with a deterministic heuristic."""

    def __init__(self, scripts: Optional[Mapping[str, Script]] = None) -> None:
        self._scripts: Dict[str, Script] = dict(scripts or {})
        self._handlers: Dict[str, Callable[[Dict[str, Any], random.Random], str]] = {
            "agent": self._agent,
            "chain_proposer": self._plan_chain,
            "code_agent": self._write_program,
            "debug_agent": self._debug_program,
            "dependency_agent": self._refine_edges,
            "gating": self._gate,
            "instruction_writer": self._write_instruction,
            "oracle": self._plan_chain,
            "schema_agent": self._design_schema,
            "state_builder": self._build_records,
            "test_agent": self._write_cases,
            "user_simulator": self._simulate_user,
        }

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        script = self._scripts.get(request.role)
        if script is not None:
            text = script(request)
        else:
            handler = self._handlers.get(request.role)
            if handler is None:
                raise ProviderError("malformed-output", f"mock provider has no handler for role '{request.role}'")
            rng = random.Random(f"{request.digest()}:{request.sampling.seed}")
            text = handler(request.context(), rng)
        prompt_tokens = sum(estimate_tokens(message.content) for message in request.messages)
        return ProviderResponse(text=text, usage=ProviderUsage(prompt_tokens, estimate_tokens(text)))

    # gating / dependency refinement -------------------------------------------------

    @staticmethod
    def _gate(context: Dict[str, Any], rng: random.Random) -> str:
        feasibility = float(context.get("feasibility", 0.0))
        complexity = float(context.get("complexity", 0.0))
        score = 0.5 * feasibility + 0.5 * (1.0 - min(complexity, 1.0))
        return _format_score(max(0.0, min(1.0, score)))

    @staticmethod
    def _refine_edges(context: Dict[str, Any], rng: random.Random) -> str:
        return json.dumps({"remove": []})

    # chain proposal ------------------------------------------------------------------

    def _plan_chain(self, context: Dict[str, Any], rng: random.Random) -> str:
        tools = {tool["name"]: tool for tool in context.get("tools", [])}
        names = sorted(tools)
        if not names:
            return json.dumps({"purpose": "", "steps": []})

        flow = {(a, b) for a, b in context.get("data_flow", []) if a in tools and b in tools and a != b}
        linked = flow | {(a, b) for a, b in context.get("neighbors", []) if a in tools and b in tools and a != b}
        avoid = set(context.get("avoid", []))
        starters = sorted({a for a, _ in flow}) or names
        start = rng.choice(_prefer(starters, avoid))

        upper = max(1, min(len(names), int(context.get("max_steps", 4)), 4))
        lower = max(1, min(int(context.get("min_steps", 2)), upper))
        target = rng.randint(lower, upper)

        chosen = [start]
        while len(chosen) < target:
            used = set(chosen)
            candidates = sorted({b for a, b in flow if a in used and b not in used})
            if not candidates:
                candidates = sorted({b for a, b in linked if a in used and b not in used})
            if not candidates:
                candidates = [name for name in names if name not in used]
            chosen.append(rng.choice(_prefer(candidates, avoid)))

        hints = context.get("param_hints", {})
        known = {key: list(items) for key, items in context.get("known_values", {}).items()}
        values = ValueFactory(rng, context.get("clock"), column_samples(known))
        prefix = str(context.get("step_prefix", "c1"))
        created: Set[Any] = set()
        produced: List[Tuple[str, str, str]] = []
        steps = []
        for index, name in enumerate(chosen, start=1):
            step_id = f"{prefix}s{index}"
            args: Dict[str, Any] = {}
            for param in tools[name].get("params", []):
                if not param.get("required", True):
                    continue
                hint = hints.get(name, {}).get(param["name"])
                if hint and hint.get("op") == "create":
                    args[param["name"]] = self._literal(param, hint, known, values, rng, created)
                    continue
                reference = next(
                    (
                        f"{sid}.{field}"
                        for sid, field, field_type in reversed(produced)
                        if field == param["name"] and field_type == param["type"]
                    ),
                    None,
                )
                if reference is not None:
                    args[param["name"]] = {"$ref": reference}
                    continue
                args[param["name"]] = self._literal(param, hint, known, values, rng, created)
            steps.append({"id": step_id, "tool": name, "args": args})
            produced.extend((step_id, field["name"], field["type"]) for field in tools[name].get("returns", []))

        purpose = "Use " + ", then ".join(name.replace("_", " ") for name in chosen)
        return json.dumps({"purpose": purpose, "steps": steps}, sort_keys=True)

    @staticmethod
    def _literal(
        param: Mapping[str, Any],
        hint: Optional[Mapping[str, Any]],
        known: Mapping[str, List[Any]],
        values: ValueFactory,
        rng: random.Random,
        created: Set[Any],
    ) -> Any:
        name, value_type = param["name"], param["type"]
        if not hint:
            return values.value(name, value_type)
        op = hint.get("op", "set")
        pool = [item for item in known.get(f"{hint.get('table')}.{hint.get('column')}", []) if item is not None]
        if op == "create":
            key = values.fresh_key(str(hint.get("column") or name), value_type, set(pool) | created)
            created.add(key)
            return key
        if op == "lookup":
            if value_type == "list-of-string":
                strings = sorted(str(item) for item in pool)
                if strings:
                    return sorted(rng.sample(strings, min(2, len(strings))))
                return [values.fresh_key(str(hint.get("column") or name), "string", created)]
            if pool:
                return rng.choice(sorted(pool, key=str))
            return values.fresh_key(str(hint.get("column") or name), value_type, created)
        if op == "match" and pool:
            return rng.choice(sorted(pool, key=str))
        if op == "contains" and pool:
            words = sorted(
                {word for item in pool if isinstance(item, str) for word in re.findall(r"[A-Za-z]{4,}", item)}
            )
            if words:
                return rng.choice(words)
        return values.value(name, value_type)

    # state construction --------------------------------------------------------------

    def _build_records(self, context: Dict[str, Any], rng: random.Random) -> str:
        tables = {table["name"]: table for table in context.get("tables", [])}
        values = ValueFactory(rng, context.get("clock"))
        existing = {name: list(keys) for name, keys in context.get("existing_keys", {}).items()}
        forbidden = {(item["table"], item["key"]) for item in context.get("forbidden", [])}
        requirements = context.get("requirements", [])
        preferred: Dict[str, List[Any]] = {}
        for requirement in requirements:
            if requirement.get("kind") == "lookup":
                preferred.setdefault(requirement["table"], []).append(requirement["key"])

        built: Dict[str, Dict[Any, Dict[str, Any]]] = {}

        def taken(table: str) -> Set[Any]:
            keys = set(existing.get(table, [])) | set(built.get(table, {}))
            return keys | {key for name, key in forbidden if name == table}

        def make_row(table: str, key: Any, overrides: Mapping[str, Any], depth: int) -> None:
            schema = tables[table]
            foreign = {fk["column"]: fk["references"].split(".")[0] for fk in schema.get("foreign_keys", [])}
            row: Dict[str, Any] = {}
            for column in schema.get("columns", []):
                column_name = column["name"]
                if column_name in overrides:
                    row[column_name] = overrides[column_name]
                elif column_name == schema["primary_key"]:
                    row[column_name] = key
                elif column_name in foreign:
                    row[column_name] = parent_key(foreign[column_name], depth)
                elif column.get("default") is not None:
                    row[column_name] = column["default"]
                else:
                    row[column_name] = values.value(column_name, column["type"])
            built.setdefault(table, {})[key] = row

        def parent_key(parent: str, depth: int) -> Any:
            for candidate in preferred.get(parent, []):
                if candidate in built.get(parent, {}) or candidate in existing.get(parent, []):
                    return candidate
            if built.get(parent):
                return sorted(built[parent], key=str)[0]
            if existing.get(parent):
                return sorted(existing[parent], key=str)[0]
            schema = tables.get(parent)
            if schema is None or depth > len(tables):
                return None
            pk_type = next(c["type"] for c in schema["columns"] if c["name"] == schema["primary_key"])
            fresh = values.fresh_key(schema["primary_key"], pk_type, taken(parent))
            make_row(parent, fresh, {}, depth + 1)
            return fresh

        for requirement in requirements:
            table = requirement.get("table")
            if table not in tables:
                continue
            if requirement.get("kind") == "lookup":
                key = requirement["key"]
                if key in taken(table):
                    continue
                make_row(table, key, {}, 0)
            else:
                schema = tables[table]
                pk_type = next(c["type"] for c in schema["columns"] if c["name"] == schema["primary_key"])
                fresh = values.fresh_key(schema["primary_key"], pk_type, taken(table))
                make_row(table, fresh, {requirement["column"]: requirement["value"]}, 0)

        records = {table: [rows[key] for key in sorted(rows, key=str)] for table, rows in sorted(built.items())}
        return json.dumps({"records": records}, sort_keys=True)

    # instructions and simulated users -------------------------------------------------

    @staticmethod
    def _write_instruction(context: Dict[str, Any], rng: random.Random) -> str:
        labels = {str(entity["key"]): entity.get("label") for entity in context.get("entities", [])}
        lines = [f"Goal: {context.get('purpose', 'complete the requested changes')}"]
        for step in context.get("steps", []):
            description = str(step.get("description") or step.get("tool", "")).split(". ")[0].rstrip(".")
            description = description[:1].lower() + description[1:]
            details = []
            for name, value in sorted(step.get("args", {}).items()):
                if isinstance(value, dict):
                    continue
                if isinstance(value, list):
                    details.append(f"{name} {', '.join(str(item) for item in value)}")
                elif isinstance(value, str) and value in labels and labels[value]:
                    details.append(f'{name} {value} ("{labels[value]}")')
                elif isinstance(value, str):
                    details.append(f'{name} "{value}"')
                elif isinstance(value, bool):
                    details.append(f"{name} {'yes' if value else 'no'}")
                else:
                    details.append(f"{name} {value:g}" if isinstance(value, float) else f"{name} {value}")
            suffix = f" using {', '.join(details)}" if details else ""
            lines.append(f"- {description}{suffix}")
        hint = context.get("profile_hint", {})
        profile = {
            "name": hint.get("name") or "Taylor Morgan",
            "known_ids": list(hint.get("known_ids", [])),
        }
        return json.dumps({"intent": "\n".join(lines), "profile": profile}, sort_keys=True)

    @staticmethod
    def _simulate_user(context: Dict[str, Any], rng: random.Random) -> str:
        intent = str(context.get("intent", ""))
        bullets = [line[2:].strip() for line in intent.splitlines() if line.startswith("- ")]
        profile = context.get("profile", {})
        user_turns = int(context.get("user_turns", 0))
        if user_turns == 0:
            request = "; ".join(bullets) if bullets else intent.replace("\n", " ")
            name = profile.get("name")
            signature = f" My name is {name}." if name else ""
            return f"Hi! I need help with the following: {request}.{signature}"
        last = str(context.get("last_assistant", "")).lower()
        if any(word in last for word in _COMPLETION_WORDS) or user_turns > len(bullets):
            return f"Thanks, that's everything. {STOP_MARKER}"
        return f"To clarify: {bullets[user_turns - 1]}."

    @staticmethod
    def _agent(context: Dict[str, Any], rng: random.Random) -> str:
        return json.dumps({"respond": f"I have completed your request. {DONE_MARKER}"})

    # domain synthesis -----------------------------------------------------------------

    @staticmethod
    def _design_schema(context: Dict[str, Any], rng: random.Random) -> str:
        entities = [str(entity) for entity in context.get("entities", [])]
        tables, tools, policies = [], [], {}
        for index, entity in enumerate(entities):
            key = f"{entity}_id"
            parent = entities[index - 1] if index else None
            columns = [
                {"name": key, "type": "string", "nullable": False, "default": None},
                {"name": "name", "type": "string", "nullable": False, "default": None},
                {"name": "description", "type": "string", "nullable": True, "default": None},
                {"name": "created_at", "type": "datetime", "nullable": False, "default": None},
            ]
            foreign_keys = []
            policies[entity] = {key: "Exempt", "name": "Hard", "description": "Semantic", "created_at": "Exempt"}
            create_params = [
                {"name": "name", "type": "string", "required": True, "description": f"Name of the {entity}."},
                {"name": "description", "type": "string", "required": False, "description": "Free-text notes."},
            ]
            if parent:
                parent_key = f"{parent}_id"
                columns.append({"name": parent_key, "type": "string", "nullable": False, "default": None})
                foreign_keys.append({"column": parent_key, "references": f"{parent}.{parent_key}"})
                policies[entity][parent_key] = "Hard"
                create_params.insert(0, {"name": parent_key, "type": "string", "required": True, "description": f"Owning {parent}."})
            tables.append({"name": entity, "primary_key": key, "columns": columns, "foreign_keys": foreign_keys})

            key_param = {"name": key, "type": "string", "required": True, "description": f"Identifier of the {entity}."}
            not_found = {"name": "NotFound", "message": f"No {entity} with id {{{key}}}."}
            readable = [{"name": key, "type": "string"}, {"name": "name", "type": "string"}, {"name": "description", "type": "string"}]
            create_exceptions = [dict(not_found, message=f"No {parent} with id {{{parent}_id}}.")] if parent else []
            tools.extend(
                [
                    {
                        "name": f"create_{entity}",
                        "description": f"Create a new {entity} record.",
                        "params": create_params,
                        "returns": [{"name": key, "type": "string"}],
                        "preconditions": [],
                        "postconditions": [f"{entity}_exists"],
                        "declared_exceptions": create_exceptions,
                    },
                    {
                        "name": f"get_{entity}",
                        "description": f"Fetch one {entity} by id.",
                        "params": [key_param],
                        "returns": readable,
                        "preconditions": [f"{entity}_exists"],
                        "postconditions": [],
                        "declared_exceptions": [not_found],
                    },
                    {
                        "name": f"list_{entity}s",
                        "description": f"List every {entity} id.",
                        "params": [],
                        "returns": [{"name": "count", "type": "integer"}, {"name": f"{entity}_ids", "type": "list-of-string"}],
                        "preconditions": [],
                        "postconditions": [],
                        "declared_exceptions": [],
                    },
                    {
                        "name": f"update_{entity}_description",
                        "description": f"Replace the description of a {entity}.",
                        "params": [key_param, {"name": "description", "type": "string", "required": True, "description": "New description."}],
                        "returns": [{"name": key, "type": "string"}],
                        "preconditions": [f"{entity}_exists"],
                        "postconditions": [],
                        "declared_exceptions": [not_found],
                    },
                    {
                        "name": f"delete_{entity}",
                        "description": f"Delete a {entity} that has no dependent records.",
                        "params": [key_param],
                        "returns": [{"name": key, "type": "string"}, {"name": "deletion_status", "type": "string"}],
                        "preconditions": [f"{entity}_exists"],
                        "postconditions": [],
                        "declared_exceptions": [not_found, {"name": "HasDependents", "message": f"The {entity} still has dependent records."}],
                    },
                ]
            )
        payload = {
            "domain_name": str(context.get("domain_name", "synthesized")),
            "database": {"tables": tables},
            "tools": tools,
            "mapping": {},
            "reward_policies": {"semantic_threshold": 0.5, "policies": policies},
        }
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def _write_program(context: Dict[str, Any], rng: random.Random) -> str:
        if context.get("program"):
            return str(context["program"])
        kind = context.get("kind")
        table = context.get("table", {})
        name = table.get("name", "")
        key = table.get("primary_key", "")
        parent_columns = [fk["column"] for fk in table.get("foreign_keys", [])]
        children: Sequence[Mapping[str, str]] = context.get("children", [])
        not_found = f'require exists {name}[${key}] else NotFound "No {name} with id {{{key}}}."'

        if kind == "create":
            lines = []
            for column in parent_columns:
                parent = next(fk["references"].split(".")[0] for fk in table["foreign_keys"] if fk["column"] == column)
                lines.append(f'require exists {parent}[${column}] else NotFound "No {parent} with id {{{column}}}."')
            fields = [f'{key}: gen_id("{name.upper()}-")', "name: $name", "description: $description", "created_at: now()"]
            fields.extend(f"{column}: ${column}" for column in parent_columns)
            lines.append(f"insert {name} {{{', '.join(fields)}}} as created")
            lines.append(f"return {{{key}: created.{key}}}")
            return "\n".join(lines) + "\n"
        if kind == "get":
            return (
                f"{not_found}\n"
                f"let row = get {name}[${key}]\n"
                f"return {{{key}: row.{key}, name: row.name, description: row.description}}\n"
            )
        if kind == "list":
            return f"let rows = find {name}\nreturn {{count: len(rows), {name}_ids: keys(rows)}}\n"
        if kind == "update":
            return f"{not_found}\nupdate {name}[${key}] {{description: $description}}\nreturn {{{key}: ${key}}}\n"
        if kind == "delete":
            lines = [not_found]
            for index, child in enumerate(children):
                lines.append(f"let dependents{index} = find {child['table']} where .{child['column']} == ${key}")
                lines.append(
                    f'require len(dependents{index}) == 0 else HasDependents "The {name} still has dependent records."'
                )
            lines.append(f"delete {name}[${key}]")
            lines.append(f'return {{{key}: ${key}, deletion_status: "deleted"}}')
            return "\n".join(lines) + "\n"
        raise ProviderError("malformed-output", f"mock code agent cannot write a '{kind}' program")

    @staticmethod
    def _debug_program(context: Dict[str, Any], rng: random.Random) -> str:
        return str(context.get("program", ""))

    @staticmethod
    def _write_cases(context: Dict[str, Any], rng: random.Random) -> str:
        tool = context.get("tool", {})
        kind = context.get("kind")
        table = context.get("table", {})
        key = table.get("primary_key")
        cases: List[Dict[str, Any]] = []
        if kind in {"get", "update", "delete"}:
            args = {param["name"]: f"MISSING-{param['name']}" for param in tool.get("params", []) if param.get("required")}
            cases.append(
                {
                    "name": f"{tool.get('name')}_unknown_key",
                    "tool": tool.get("name"),
                    "args": args,
                    "records": {},
                    "expect": {"outcome": "AnticipatedRejection", "exception": "NotFound"},
                }
            )
        if kind == "create" and not table.get("foreign_keys"):
            cases.append(
                {
                    "name": f"{tool.get('name')}_inserts_row",
                    "tool": tool.get("name"),
                    "args": {"name": "Sample record", "description": "Created by a procedural test"},
                    "records": {},
                    "expect": {
                        "outcome": "Success",
                        "returns": {key: {"$prefix": f"{table.get('name', '').upper()}-"}},
                        "diff": {table.get("name"): {"inserted": 1}},
                    },
                }
            )
        if kind == "list":
            cases.append(
                {
                    "name": f"{tool.get('name')}_empty_table",
                    "tool": tool.get("name"),
                    "args": {},
                    "records": {},
                    "expect": {"outcome": "Success", "returns": {"count": 0}},
                }
            )
        return json.dumps({"cases": cases}, sort_keys=True)


def scripted(responses: Iterable[str]) -> Script:
    """Return a script that yields ``responses`` in order and repeats the last one."""

    queue = list(responses)
    if not queue:
        raise ValueError("scripted() needs at least one response")
    state = {"index": 0}

    def _next(request: ProviderRequest) -> str:
        index = min(state["index"], len(queue) - 1)
        state["index"] += 1
        return queue[index]

    return _next


__all__ = ["DONE_MARKER", "MockProvider", "STOP_MARKER", "Script", "scripted"]
