"""Tests for core.instructions module."""

from __future__ import annotations

import json
import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from adapters.domain_store import load_domain
from core.chains import parse_chain
from core.instructions import (
    DATE,
    IDENTIFIER,
    NUMBER,
    QUOTED,
    GroundingViolation,
    Literal,
    entities,
    grounding_index,
    profile_hint,
    scan_literals,
    synthesize_instruction,
    ungrounded_literals,
)
from providers.mock import MockProvider, scripted


@pytest.fixture(scope="module")
def package():
    return load_domain(ROOT / "domains" / "toy_library")


@pytest.fixture()
def return_chain(package):
    return parse_chain(
        {"purpose": "Close Nora's loan", "steps": [{"id": "s1", "tool": "return_book", "args": {"loan_id": "LOAN-0001"}}]},
        package.foundation,
    )


@pytest.fixture()
def lend_chain(package):
    return parse_chain(
        {"steps": [{"id": "s1", "tool": "lend_book", "args": {"book_id": "BK001", "borrower_name": "Kim Lee"}}]},
        package.foundation,
    )


def test_scan_literals_extracts_each_kind_once():
    literals = scan_literals('Lend "Kindred" (BK002) on 2024-03-01 for 3 weeks')

    assert literals == [
        Literal(QUOTED, "Kindred"),
        Literal(IDENTIFIER, "BK002"),
        Literal(DATE, "2024-03-01"),
        Literal(NUMBER, "3"),
    ]


def test_ungrounded_literals_checks_state_and_chain_values(package, lend_chain):
    index = grounding_index([lend_chain], package.base_state())

    text = 'Lend BK001 to "Kim Lee", keep 2 copies, and ask about BK999 and 7 more "Dune" copies'

    assert ungrounded_literals(text, index) == ["Dune", "BK999", "7"]


def test_grounding_accepts_substrings_of_known_text(package, lend_chain):
    index = grounding_index([lend_chain], package.base_state())

    assert ungrounded_literals('The "Dispossessed" by "Le Guin"', index) == []


def test_entities_use_lookup_literals_with_labels(package, return_chain, lend_chain):
    state = package.base_state()

    found = entities([lend_chain, return_chain], state, package)

    assert found == [
        {"table": "book", "key": "BK001", "label": "The Dispossessed"},
        {"table": "loan", "key": "LOAN-0001", "label": "Nora Patel"},
    ]


def test_profile_hint_takes_name_from_first_entity(package, return_chain):
    state = package.base_state()

    hint = profile_hint(entities([return_chain], state, package), state)

    assert hint == {"name": "Nora Patel", "known_ids": ["LOAN-0001"]}


def test_synthesize_instruction_retries_until_grounded(package, return_chain):
    replies = [
        json.dumps({"intent": "Return loan LOAN-7777 please."}),
        json.dumps({"intent": "Please return loan LOAN-0001.", "profile": {"known_ids": ["BK002"]}}),
    ]
    provider = MockProvider(scripts={"instruction_writer": scripted(replies)})

    intent, profile = synthesize_instruction(provider, [return_chain], package.base_state(), package)

    assert intent == "Please return loan LOAN-0001."
    assert profile == {"known_ids": ["BK002", "LOAN-0001"], "name": "Nora Patel"}


def test_synthesize_instruction_raises_with_last_ungrounded(package, return_chain):
    provider = MockProvider(scripts={"instruction_writer": scripted([json.dumps({"intent": "Close LOAN-7777."})])})

    with pytest.raises(GroundingViolation) as excinfo:
        synthesize_instruction(provider, [return_chain], package.base_state(), package, retries=2)

    assert excinfo.value.literals == ["LOAN-7777"]


def test_mock_instruction_writer_is_grounded(package, return_chain):
    intent, profile = synthesize_instruction(MockProvider(), [return_chain], package.base_state(), package, seed=5)

    assert "LOAN-0001" in intent
    assert profile["name"] == "Nora Patel"
