"""Tests for core.task_forge module."""

from __future__ import annotations

import json
import pathlib
import random
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from adapters.bundle_store import write_bundle
from adapters.domain_store import load_domain
from core.agents import ReplayAgent, ScriptedUser
from core.chains import parse_chain
from core.dependency_graph import build_graph
from core.episode import run_episode
from core.interpreter import FAILURE
from core.reward import evaluate
from core.state import check_integrity
from core.synthetic_values import ValueFactory
from core.task_forge import (
    EXPAND,
    STOP,
    ChainFailed,
    derive_probe_args,
    derive_reward,
    feasibility_score,
    forge_task,
    gate_expansion,
    probe_toolset,
)
from providers.mock import MockProvider, scripted

LEND = {"steps": [{"id": "o1", "tool": "lend_book", "args": {"book_id": "BK001", "borrower_name": "Kim Lee"}}]}


@pytest.fixture(scope="module")
def graph(toy_package):
    return build_graph(toy_package.foundation, toy_package.programs)


def _refuse(request):
    raise AssertionError("the gate must not consult the provider")


# ---------------------------------------------------------------------------
# Gating
# ---------------------------------------------------------------------------

def test_gate_expands_when_score_reaches_tau():
    decision = gate_expansion(MockProvider(), pool_size=3, c=0.5, g=1.0, tau=0.5)

    assert decision.p == pytest.approx(0.75)
    assert decision.verdict == EXPAND
    assert gate_expansion(MockProvider(), pool_size=3, c=0.5, g=1.0, tau=0.8).verdict == STOP


def test_gate_stops_on_empty_pool_without_asking():
    decision = gate_expansion(MockProvider(scripts={"gating": _refuse}), pool_size=0, c=0.1, g=1.0)

    assert decision.verdict == STOP
    assert decision.p == 0.0


def test_gate_clamps_scores():
    decision = gate_expansion(MockProvider(scripts={"gating": scripted(["1.7"])}), pool_size=2, c=0.0, g=0.0, tau=1.0)

    assert decision.p == 1.0
    assert decision.verdict == EXPAND
    assert decision.to_dict()["verdict"] == EXPAND


@pytest.mark.parametrize(("c", "g"), [(-0.1, 0.5), (0.5, 1.5), (0.5, -0.2)])
def test_gate_validates_inputs(c, g):
    with pytest.raises(ValueError):
        gate_expansion(MockProvider(), pool_size=1, c=c, g=g)


# ---------------------------------------------------------------------------
# Feasibility
# ---------------------------------------------------------------------------

def test_feasibility_counts_successful_oracle_chains(toy_package, graph):
    replies = [
        json.dumps(LEND),
        "not json",
        json.dumps({"steps": [{"id": "o1", "tool": "add_book", "args": {"author": "A", "book_id": "BK070", "title": "T"}}]}),
        json.dumps({"steps": [{"id": "o1", "tool": "get_book", "args": {"book_id": "BK404"}}]}),
    ]
    provider = MockProvider(scripts={"oracle": scripted(replies)})

    score = feasibility_score(provider, graph, ["get_book", "lend_book", "return_book"], toy_package, 4, 0, toy_package.base_state())

    assert score == pytest.approx(0.25)


def test_feasibility_of_empty_pool_is_zero(toy_package, graph):
    provider = MockProvider(scripts={"oracle": _refuse})

    assert feasibility_score(provider, graph, [], toy_package, 4, 0, toy_package.base_state()) == 0.0
    assert feasibility_score(provider, graph, ["get_book"], toy_package, 0, 0, toy_package.base_state()) == 0.0


# ---------------------------------------------------------------------------
# Ground truth and probes
# ---------------------------------------------------------------------------

def test_derive_reward_runs_chains(toy_package):
    chain = parse_chain(LEND, toy_package.foundation)

    final, spec = derive_reward([chain], toy_package.base_state(), toy_package)

    assert final.get("loan", "LOAN-000001")["borrower_name"] == "Kim Lee"
    assert spec == toy_package.foundation.reward_policies


def test_derive_reward_raises_for_broken_chain(toy_package):
    chain = parse_chain({"steps": [{"id": "o1", "tool": "lend_book", "args": {"book_id": "BK002", "borrower_name": "Kim"}}]}, toy_package.foundation)

    with pytest.raises(ChainFailed):
        derive_reward([chain], toy_package.base_state(), toy_package)


def test_derive_probe_args_by_role(toy_package):
    state = toy_package.base_state()
    values = ValueFactory(random.Random(0), state.clock)

    returning = derive_probe_args(toy_package, "return_book", state, {}, values)
    adding = derive_probe_args(toy_package, "add_book", state, {}, values)
    lending = derive_probe_args(toy_package, "lend_book", state, {"book_id": "BK003"}, values)

    assert returning == {"loan_id": "LOAN-0001"}
    assert adding["book_id"] not in state.keys("book")
    assert adding["author"] == "Ursula Le Guin"
    assert set(adding) == {"author", "book_id", "copies", "title"}
    assert lending["book_id"] == "BK003"


def test_probe_toolset_never_fails_unexpectedly(toy_package):
    chain = parse_chain(LEND, toy_package.foundation)
    toolset = toy_package.foundation.tool_names

    state, records = probe_toolset(toy_package, toolset, toy_package.base_state(), [chain], seed=3)

    assert sorted(record.tool for record in records) == sorted(toolset)
    assert all(record.variant != FAILURE for record in records)
    assert check_integrity(state) == []


# ---------------------------------------------------------------------------
# Full forge with the deterministic mock
# ---------------------------------------------------------------------------


DOMAINS = ROOT / "domains"


@pytest.fixture(scope="module")
def job_package():
    return load_domain(DOMAINS / "job_seeking")


@pytest.fixture(scope="module")
def job_graph(job_package):
    return build_graph(job_package.foundation, job_package.programs)


def _level(seed):
    return seed % 3 + 1


def _assert_forged_bundle(bundle, package, graph):
    s0 = bundle.fresh_state()
    s_gt = bundle.ground_truth_state()

    assert check_integrity(s0) == []
    assert check_integrity(s_gt) == []
    assert evaluate(s_gt, s_gt, bundle.reward_spec).reward == 1
    assert run_episode(bundle, ReplayAgent(bundle), ScriptedUser(["Hello."])).reward == 1

    assert len(bundle.toolset) >= min(20, len(graph.nodes))
    probes = bundle.provenance["probes"]
    assert sorted(record["tool"] for record in probes) == sorted(bundle.toolset)
    assert all(record["variant"] != FAILURE for record in probes)
    _, records = probe_toolset(package, bundle.toolset, s0, bundle.chains(), bundle.seed)
    assert all(record.variant != FAILURE for record in records)


@pytest.mark.parametrize("seed", range(1, 51))
def test_toy_bundles_hold_across_seeds(toy_package, graph, seed):
    bundle = forge_task(MockProvider(), toy_package, graph, _level(seed), seed)

    assert bundle.bundle_id == f"toy_library-L{_level(seed)}-S{seed}"
    assert len(bundle.toolset) == len(graph.nodes) == 6
    _assert_forged_bundle(bundle, toy_package, graph)


@pytest.mark.parametrize("level", [1, 2, 3])
@pytest.mark.parametrize("seed", [29, 31])
def test_toy_bundles_hold_at_every_level(toy_package, graph, seed, level):
    bundle = forge_task(MockProvider(), toy_package, graph, level, seed)

    _assert_forged_bundle(bundle, toy_package, graph)


@pytest.mark.parametrize("seed", range(1, 51))
def test_job_seeking_bundles_hold_across_seeds(job_package, job_graph, seed):
    bundle = forge_task(MockProvider(), job_package, job_graph, _level(seed), seed)

    assert len(job_graph.nodes) >= 20
    assert len(bundle.toolset) >= 20
    _assert_forged_bundle(bundle, job_package, job_graph)


def test_forging_twice_writes_identical_bundles(toy_package, graph, tmp_path):
    first = write_bundle(forge_task(MockProvider(), toy_package, graph, 2, 7), graph, tmp_path / "a")
    second = write_bundle(forge_task(MockProvider(), toy_package, graph, 2, 7), graph, tmp_path / "b")

    names = sorted(path.name for path in first.iterdir())
    assert names == sorted(path.name for path in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()
