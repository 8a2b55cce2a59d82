"""Tool dependency graph: construction, metrics and dependency-aware expansion."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from core.domain_format import canonical_json, tool_to_payload
from core.effect_language import EffectProgram
from core.program_analysis import generated_field_names
from core.prompts import build_messages
from core.provider_service import LLMProvider, ask, extract_json
from core.schema import DomainFoundation, ToolSchema

logger = logging.getLogger(__name__)

DATA_FLOW = "DataFlow"
CONDITION = "Condition"
SHARED_STATE = "SharedState"
REASONS: Tuple[str, ...] = (CONDITION, DATA_FLOW, SHARED_STATE)

EDGE_WEIGHT = 0.5
SATURATION = 50

Field = Tuple[str, str]
Edge = Tuple[str, str]


@dataclass(frozen=True)
class ToolDependencyGraph:
    """Simple directed graph over tool names; parallel edges merge their reasons."""

    nodes: Tuple[str, ...]
    edges: Mapping[Edge, FrozenSet[str]] = field(default_factory=dict)
    provides: Mapping[str, FrozenSet[Field]] = field(default_factory=dict)
    needs: Mapping[str, FrozenSet[Field]] = field(default_factory=dict)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def has_edge(self, source: str, target: str) -> bool:
        return (source, target) in self.edges

    def reasons(self, source: str, target: str) -> FrozenSet[str]:
        return self.edges.get((source, target), frozenset())

    def successors(self, node: str) -> List[str]:
        return sorted(target for source, target in self.edges if source == node)

    def predecessors(self, node: str) -> List[str]:
        return sorted(source for source, target in self.edges if target == node)

    def neighbors(self, node: str) -> List[str]:
        return sorted(set(self.successors(node)) | set(self.predecessors(node)))

    def edges_with(self, reason: str) -> List[Edge]:
        return sorted(edge for edge, reasons in self.edges.items() if reason in reasons)

    def subgraph(self, nodes: Iterable[str]) -> "ToolDependencyGraph":
        """Induced subgraph over ``nodes`` (unknown names are ignored)."""

        keep = set(nodes) & set(self.nodes)
        return ToolDependencyGraph(
            nodes=tuple(sorted(keep)),
            edges={edge: reasons for edge, reasons in sorted(self.edges.items()) if edge[0] in keep and edge[1] in keep},
            provides={name: self.provides.get(name, frozenset()) for name in sorted(keep)},
            needs={name: self.needs.get(name, frozenset()) for name in sorted(keep)},
        )

    def without_edges(self, removed: Iterable[Edge]) -> "ToolDependencyGraph":
        dropped = set(removed)
        return ToolDependencyGraph(
            nodes=self.nodes,
            edges={edge: reasons for edge, reasons in self.edges.items() if edge not in dropped},
            provides=self.provides,
            needs=self.needs,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "nodes": list(self.nodes),
            "edges": [
                {"from": source, "to": target, "reasons": sorted(reasons)}
                for (source, target), reasons in sorted(self.edges.items())
            ],
        }


@dataclass(frozen=True)
class ComplexityReport:
    node_count: int
    edge_count: int
    c: float
    density: float

    def to_dict(self) -> Dict[str, Any]:
        return {"node_count": self.node_count, "edge_count": self.edge_count, "c": self.c, "density": self.density}


def _return_fields(tool: ToolSchema) -> FrozenSet[Field]:
    return frozenset((item.name, item.type) for item in tool.returns)


def _param_fields(tool: ToolSchema) -> FrozenSet[Field]:
    return frozenset((item.name, item.type) for item in tool.params)


def heuristic_edges(foundation: DomainFoundation) -> Dict[Edge, FrozenSet[str]]:
    """Edges re-derivable from schemas and the tool/table mapping alone."""

    edges: Dict[Edge, Set[str]] = {}
    tools = sorted(foundation.tools, key=lambda item: item.name)
    for source in tools:
        produced = _return_fields(source)
        posts = set(source.postconditions)
        writes = foundation.mapping.writes(source.name)
        for target in tools:
            if source.name == target.name:
                continue
            reasons = edges.setdefault((source.name, target.name), set())
            if produced & _param_fields(target):
                reasons.add(DATA_FLOW)
            if posts & set(target.preconditions):
                reasons.add(CONDITION)
            if writes & foundation.mapping.reads(target.name):
                reasons.add(SHARED_STATE)
    return {edge: frozenset(reasons) for edge, reasons in sorted(edges.items()) if reasons}


def _needs(foundation: DomainFoundation, generated: FrozenSet[str]) -> Dict[str, FrozenSet[Field]]:
    """Required inputs that only exist once some tool has produced them (runtime-generated ids)."""

    producers: Dict[Field, Set[str]] = {}
    for tool in foundation.tools:
        for item in _return_fields(tool):
            producers.setdefault(item, set()).add(tool.name)
    needs: Dict[str, FrozenSet[Field]] = {}
    for tool in sorted(foundation.tools, key=lambda item: item.name):
        required = {
            (param.name, param.type)
            for param in tool.params
            if param.required
            and param.name in generated
            and producers.get((param.name, param.type), set()) - {tool.name}
        }
        needs[tool.name] = frozenset(required)
    return needs


def _prune_with_provider(
    provider: LLMProvider, foundation: DomainFoundation, edges: Mapping[Edge, FrozenSet[str]], seed: int
) -> Set[Edge]:
    context = {
        "domain": foundation.domain_name,
        "tools": [tool_to_payload(tool) for tool in foundation.tools],
        "edges": [{"from": s, "to": t, "reasons": sorted(r)} for (s, t), r in sorted(edges.items())],
    }
    messages = build_messages("dependency_agent", context, variables={"domain": foundation.domain_name})
    reply = extract_json(ask(provider, "dependency_agent", messages, seed=seed))
    removed: Set[Edge] = set()
    for item in reply.get("remove", []) if isinstance(reply, dict) else []:
        if isinstance(item, dict):
            edge = (str(item.get("from")), str(item.get("to")))
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            edge = (str(item[0]), str(item[1]))
        else:
            continue
        if edge in edges:
            removed.add(edge)
        else:
            logger.info("[graph] ignoring request to remove unknown edge %s -> %s", *edge)
    return removed


def build_graph(
    foundation: DomainFoundation,
    programs: Mapping[str, EffectProgram],
    provider: Optional[LLMProvider] = None,
    *,
    seed: int = 0,
) -> ToolDependencyGraph:
    """Build G from data flow, condition tokens and shared tables; a provider may only prune."""

    edges = heuristic_edges(foundation)
    graph = ToolDependencyGraph(
        nodes=tuple(sorted(foundation.tool_names)),
        edges=edges,
        provides={tool.name: _return_fields(tool) for tool in sorted(foundation.tools, key=lambda item: item.name)},
        needs=_needs(foundation, generated_field_names(programs)),
    )
    if provider is not None:
        removed = _prune_with_provider(provider, foundation, edges, seed)
        if removed:
            logger.info("[graph] dependency agent pruned %s edge(s)", len(removed))
            graph = graph.without_edges(removed)
    return graph


def structural_complexity(graph: ToolDependencyGraph) -> ComplexityReport:
    """c = (|V| + 0.5|E|) / 50, unclamped; density over ordered pairs without self-loops."""

    nodes = len(graph.nodes)
    edges = graph.edge_count
    density = edges / (nodes * (nodes - 1)) if nodes >= 2 else 0.0
    return ComplexityReport(nodes, edges, (nodes + EDGE_WEIGHT * edges) / SATURATION, density)


def admissible(graph: ToolDependencyGraph, node: str, admitted: Iterable[str]) -> bool:
    """True when every generated-id input of ``node`` is returned by some admitted tool."""

    available: Set[Field] = set()
    for name in admitted:
        available |= graph.provides.get(name, frozenset())
    return graph.needs.get(node, frozenset()) <= available


def dependency_aware_bfs(
    graph: ToolDependencyGraph,
    seed: Iterable[str],
    budget: Optional[int] = None,
) -> Tuple[str, ...]:
    """Expand ``seed`` layer by layer over neighbours, admitting satisfiable tools in name order."""

    admitted: List[str] = sorted(set(seed))
    unknown = [name for name in admitted if name not in graph.nodes]
    if unknown:
        raise ValueError(f"Seed tools are not in the graph: {unknown}")
    limit = len(graph.nodes) if budget is None else budget
    members = set(admitted)
    while len(members) < limit:
        layer = sorted({n for member in sorted(members) for n in graph.neighbors(member)} - members)
        added = False
        for candidate in layer:
            if len(members) >= limit:
                break
            if admissible(graph, candidate, members):
                members.add(candidate)
                admitted.append(candidate)
                added = True
        if not added:
            break
    return tuple(admitted)


def remaining(graph: ToolDependencyGraph, toolset: Iterable[str]) -> Tuple[str, ...]:
    held = set(toolset)
    return tuple(name for name in graph.nodes if name not in held)


def to_dot(graph: ToolDependencyGraph, name: str = "tools") -> str:
    """Render ``graph`` as digraph text with edge reasons as labels."""

    lines = [f'digraph "{name}" {{']
    for node in graph.nodes:
        lines.append(f'  "{node}";')
    for (source, target), reasons in sorted(graph.edges.items()):
        lines.append(f'  "{source}" -> "{target}" [label="{",".join(sorted(reasons))}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_metrics(graph: ToolDependencyGraph) -> Dict[str, Any]:
    report = structural_complexity(graph)
    payload = report.to_dict()
    payload["edges_by_reason"] = {reason: len(graph.edges_with(reason)) for reason in REASONS}
    return payload


def domain_statistics(foundation: DomainFoundation, graph: ToolDependencyGraph) -> Dict[str, Any]:
    """Per-domain counts: tools, tables, edges and graph density."""

    report = structural_complexity(graph)
    return {
        "domain": foundation.domain_name,
        "tools": len(foundation.tools),
        "tables": len(foundation.database.tables),
        "edges": report.edge_count,
        "density": round(report.density, 6),
    }


def metrics_document(graph: ToolDependencyGraph) -> str:
    return canonical_json(graph_metrics(graph))


__all__ = [
    "CONDITION",
    "ComplexityReport",
    "DATA_FLOW",
    "REASONS",
    "SHARED_STATE",
    "ToolDependencyGraph",
    "admissible",
    "build_graph",
    "dependency_aware_bfs",
    "domain_statistics",
    "graph_metrics",
    "heuristic_edges",
    "metrics_document",
    "remaining",
    "structural_complexity",
    "to_dot",
]
