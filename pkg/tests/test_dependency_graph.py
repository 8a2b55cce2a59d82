"""Tests for core.dependency_graph module."""

from __future__ import annotations

import json
import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from adapters.domain_store import load_domain
from core import dependency_graph as dg
from providers.mock import MockProvider, scripted


@pytest.fixture(scope="module")
def package():
    return load_domain(ROOT / "domains" / "toy_library")


@pytest.fixture(scope="module")
def graph(package):
    return dg.build_graph(package.foundation, package.programs)


def _synthetic_graph(nodes, edges):
    names = tuple(f"t{index:02d}" for index in range(nodes))
    pairs = [(a, b) for a in names for b in names if a != b][:edges]
    return dg.ToolDependencyGraph(nodes=names, edges={pair: frozenset({dg.SHARED_STATE}) for pair in pairs})


def test_structural_complexity_matches_reference_value():
    report = dg.structural_complexity(_synthetic_graph(20, 30))

    assert report.c == pytest.approx(0.7)
    assert report.density == pytest.approx(30 / 380)


def test_structural_complexity_is_unclamped_and_handles_tiny_graphs():
    assert dg.structural_complexity(_synthetic_graph(60, 40)).c == pytest.approx(1.6)
    assert dg.structural_complexity(_synthetic_graph(1, 0)).density == 0.0


def test_heuristic_edges_merge_reasons(graph):
    reasons = graph.reasons("lend_book", "return_book")

    assert reasons == frozenset({dg.DATA_FLOW, dg.CONDITION, dg.SHARED_STATE})
    assert graph.reasons("add_book", "search_books") == frozenset({dg.SHARED_STATE})
    assert not graph.has_edge("get_book", "get_book")


def test_read_only_tools_do_not_feed_shared_state(graph):
    assert all(source not in {"get_book", "list_loans", "search_books"} for source, _ in graph.edges_with(dg.SHARED_STATE))


def test_generated_inputs_become_needs(graph):
    assert graph.needs["return_book"] == frozenset({("loan_id", "string")})
    assert graph.needs["lend_book"] == frozenset()
    assert not dg.admissible(graph, "return_book", ["get_book", "add_book"])
    assert dg.admissible(graph, "return_book", ["lend_book"])


def test_dependency_aware_bfs_expands_layer_by_layer(graph):
    assert dg.dependency_aware_bfs(graph, ["add_book"], budget=3) == ("add_book", "get_book", "lend_book")
    full = dg.dependency_aware_bfs(graph, ["add_book"])
    assert sorted(full) == sorted(graph.nodes)
    assert full.index("lend_book") < full.index("return_book")


def test_dependency_aware_bfs_rejects_unknown_seed(graph):
    with pytest.raises(ValueError):
        dg.dependency_aware_bfs(graph, ["borrow_everything"])


def test_remaining_lists_tools_outside_toolset(graph):
    assert dg.remaining(graph, ["add_book", "get_book"]) == ("lend_book", "list_loans", "return_book", "search_books")


def test_provider_may_only_prune_edges(package, graph):
    reply = json.dumps({"remove": [{"from": "add_book", "to": "search_books"}, ["nobody", "nothing"]]})
    provider = MockProvider(scripts={"dependency_agent": scripted([reply])})

    pruned = dg.build_graph(package.foundation, package.programs, provider)

    assert not pruned.has_edge("add_book", "search_books")
    assert pruned.edge_count == graph.edge_count - 1
    assert set(pruned.edges) <= set(graph.edges)


def test_subgraph_keeps_only_inner_edges(graph):
    sub = graph.subgraph(["lend_book", "return_book"])

    assert sub.nodes == ("lend_book", "return_book")
    assert set(sub.edges) == {("lend_book", "return_book"), ("return_book", "lend_book")}


def test_to_dot_lists_nodes_and_labelled_edges(graph):
    text = dg.to_dot(graph, "toy_library")

    assert text.startswith('digraph "toy_library" {')
    assert '  "add_book";' in text
    assert '"lend_book" -> "return_book" [label="Condition,DataFlow,SharedState"];' in text


def test_domain_statistics_and_metrics(package, graph):
    stats = dg.domain_statistics(package.foundation, graph)
    metrics = json.loads(dg.metrics_document(graph))

    assert stats["domain"] == "toy_library"
    assert stats["tools"] == 6
    assert stats["tables"] == 2
    assert stats["edges"] == graph.edge_count
    assert metrics["node_count"] == 6
    assert set(metrics["edges_by_reason"]) == set(dg.REASONS)
