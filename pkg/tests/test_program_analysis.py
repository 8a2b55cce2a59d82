"""Tests for core.program_analysis module."""

from __future__ import annotations

import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from adapters.domain_store import load_domain
from core import program_analysis as pa


@pytest.fixture(scope="module")
def roles():
    package = load_domain(ROOT / "domains" / "toy_library")
    return pa.all_param_roles(package.programs, package.foundation.database)


def test_insert_of_primary_key_outranks_existence_check(roles):
    assert roles["add_book"]["book_id"] == pa.ParamRole(pa.CREATE, "book", "book_id")
    assert roles["add_book"]["title"].op == pa.SET
    assert "copies" not in roles["add_book"]


def test_lookup_outranks_match(roles):
    assert roles["lend_book"]["book_id"] == pa.ParamRole(pa.LOOKUP, "book", "book_id")
    assert roles["lend_book"]["borrower_name"] == pa.ParamRole(pa.SET, "loan", "borrower_name")


def test_predicates_produce_match_and_contains(roles):
    assert roles["list_loans"]["borrower_name"] == pa.ParamRole(pa.MATCH, "loan", "borrower_name")
    assert roles["search_books"]["keyword"] == pa.ParamRole(pa.CONTAINS, "book", "title")


def test_update_key_is_a_lookup(roles):
    assert roles["return_book"]["loan_id"].to_dict() == {"op": "lookup", "table": "loan", "column": "loan_id"}


def test_generated_field_names():
    package = load_domain(ROOT / "domains" / "toy_library")

    assert pa.generated_field_names(package.programs) == frozenset({"loan_id"})
