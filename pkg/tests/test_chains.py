"""Tests for core.chains module."""

from __future__ import annotations

import json
import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from adapters.domain_store import load_domain
from core.chains import (
    ChainFormatError,
    chain_context,
    ChainRef,
    ChainRejected,
    describe_failure,
    execute_chain,
    execute_chains,
    known_values,
    parse_chain,
    sample_seed_chain,
)
from core.dependency_graph import build_graph
from core.prompts import build_messages
from core.provider_service import ask
from providers.mock import MockProvider, scripted

LEND_AND_RETURN = {
    "purpose": "Lend a book and take it back",
    "steps": [
        {"id": "s1", "tool": "lend_book", "args": {"book_id": "BK001", "borrower_name": "Sam Okafor"}},
        {"id": "s2", "tool": "return_book", "args": {"loan_id": {"$ref": "s1.loan_id"}}},
    ],
}


@pytest.fixture(scope="module")
def package():
    return load_domain(ROOT / "domains" / "toy_library")


@pytest.fixture(scope="module")
def graph(package):
    return build_graph(package.foundation, package.programs)


def test_parse_chain_binds_references(package):
    chain = parse_chain(LEND_AND_RETURN, package.foundation)

    assert chain.tools == ("lend_book", "return_book")
    assert chain.steps[1].args["loan_id"] == ChainRef("s1", "loan_id")
    assert chain.steps[1].literal_args() == {}
    assert chain.to_dict() == LEND_AND_RETURN


@pytest.mark.parametrize(
    ("steps", "fragment"),
    [
        ([{"id": "s1", "tool": "burn_book", "args": {}}], "unknown tool"),
        ([{"id": "s1", "tool": "get_book", "args": {"isbn": "1"}}], "undeclared parameter 'isbn'"),
        ([{"id": "s1", "tool": "return_book", "args": {"loan_id": {"$ref": "s0.loan_id"}}}], "not an earlier step"),
        (
            [
                {"id": "s1", "tool": "get_book", "args": {"book_id": "BK001"}},
                {"id": "s2", "tool": "return_book", "args": {"loan_id": {"$ref": "s1.loan_id"}}},
            ],
            "get_book does not return",
        ),
        (
            [
                {"id": "s1", "tool": "get_book", "args": {"book_id": "BK001"}},
                {"id": "s1", "tool": "get_book", "args": {"book_id": "BK002"}},
            ],
            "repeats",
        ),
    ],
)
def test_parse_chain_reports_problems(package, steps, fragment):
    with pytest.raises(ChainFormatError) as excinfo:
        parse_chain({"steps": steps}, package.foundation)

    assert any(fragment in problem for problem in excinfo.value.problems)


def test_parse_chain_requires_steps_list(package):
    with pytest.raises(ChainFormatError):
        parse_chain({"purpose": "nothing"}, package.foundation)


def test_execute_chain_resolves_references_without_touching_input(package):
    state = package.base_state()
    chain = parse_chain(LEND_AND_RETURN, package.foundation)

    result = execute_chain(chain, state, package)

    assert result.completed
    assert result.failed_step is None
    assert result.resolved_args[1] == {"loan_id": "LOAN-000001"}
    assert result.final_state.get("loan", "LOAN-000001")["returned"] is True
    assert state.get("loan", "LOAN-000001") is None


def test_execute_chain_stops_at_first_non_success(package):
    chain = parse_chain(
        {
            "steps": [
                {"id": "s1", "tool": "add_book", "args": {"author": "A", "book_id": "BK050", "title": "T"}},
                {"id": "s2", "tool": "get_book", "args": {"book_id": "BK999"}},
                {"id": "s3", "tool": "get_book", "args": {"book_id": "BK050"}},
            ]
        },
        package.foundation,
    )

    result = execute_chain(chain, package.base_state(), package)

    assert not result.completed
    assert result.failed_step == 1
    assert len(result.outcomes) == 2
    assert result.final_state.get("book", "BK050") is not None
    assert describe_failure(chain, result).startswith("step s2 (get_book) ended with AnticipatedRejection NotFound")


def test_execute_chains_threads_state(package):
    add = parse_chain(
        {"steps": [{"id": "a1", "tool": "add_book", "args": {"author": "A", "book_id": "BK050", "title": "T"}}]},
        package.foundation,
    )
    lend = parse_chain(
        {"steps": [{"id": "b1", "tool": "lend_book", "args": {"book_id": "BK050", "borrower_name": "Kim"}}]},
        package.foundation,
    )

    final, results = execute_chains([add, lend], package.base_state(), package)

    assert [result.completed for result in results] == [True, True]
    assert final.get("loan", "LOAN-000001")["book_id"] == "BK050"


def test_known_values_lists_distinct_values(package):
    values = known_values(package.base_state())

    assert values["book.book_id"] == ["BK001", "BK002", "BK003"]
    assert values["book.copies"] == [2, 1]
    assert "loan.returned_at" not in values
    assert known_values(None) == {}


def test_sample_seed_chain_skips_unusable_proposals(package, graph):
    outside = {"steps": [{"id": "c1s1", "tool": "add_book", "args": {"author": "A", "book_id": "B", "title": "T"}}]}
    reply = scripted(["not json", json.dumps(outside), json.dumps(LEND_AND_RETURN)])
    provider = MockProvider(scripts={"chain_proposer": reply})

    chain = sample_seed_chain(provider, graph, package, ["lend_book", "return_book"], seed=1, state=package.base_state())

    assert chain.tools == ("lend_book", "return_book")


def test_sample_seed_chain_applies_probe_and_gives_up(package, graph):
    provider = MockProvider(scripts={"chain_proposer": scripted([json.dumps(LEND_AND_RETURN)])})

    with pytest.raises(ChainRejected) as excinfo:
        sample_seed_chain(
            provider,
            graph,
            package,
            ["lend_book", "return_book"],
            seed=1,
            probe=lambda chain: "does not execute",
            attempts=2,
        )

    assert len(excinfo.value.attempts) == 2


def test_sample_seed_chain_rejects_empty_pool(package, graph):
    with pytest.raises(ValueError):
        sample_seed_chain(MockProvider(), graph, package, [], seed=0)


def test_mock_proposer_chain_stays_in_pool(package, graph):
    state = package.base_state()
    pool = ["add_book", "get_book", "lend_book"]

    chain = sample_seed_chain(MockProvider(), graph, package, pool, seed=4, state=state, attempts=5)

    assert chain.tool_set() <= set(pool)
    assert 2 <= len(chain.steps) <= 8


def _propose(package, context, seed):
    messages = build_messages("chain_proposer", context, variables={"domain": package.name})
    return json.loads(ask(MockProvider(), "chain_proposer", messages, seed=seed))


@pytest.mark.parametrize("seed", range(5))
def test_mock_proposer_creates_fresh_keys_after_lookups(package, graph, seed):
    state = package.base_state()
    context = chain_context(graph, package, ["add_book", "get_book"], state=state, step_prefix="c1")
    context.update({"data_flow": [["get_book", "add_book"]], "min_steps": 2, "max_steps": 2})

    proposal = _propose(package, context, seed)

    assert [step["tool"] for step in proposal["steps"]] == ["get_book", "add_book"]
    added = proposal["steps"][1]["args"]
    assert isinstance(added["book_id"], str)
    assert added["book_id"] not in state.keys("book")

    chain = parse_chain(proposal, package.foundation)
    assert execute_chain(chain, state, package).completed


@pytest.mark.parametrize("seed", range(5))
def test_mock_proposer_draws_text_from_domain_records(package, graph, seed):
    context = chain_context(graph, package, ["add_book"], state=package.base_state(), step_prefix="c1")

    added = _propose(package, context, seed)["steps"][0]["args"]

    assert added["title"] in {"The Dispossessed", "Kindred", "Invisible Cities"}
    assert added["author"] in {"Ursula Le Guin", "Octavia Butler", "Italo Calvino"}
