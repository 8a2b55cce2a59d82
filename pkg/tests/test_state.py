"""Tests for core.state module."""

from __future__ import annotations

import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from adapters.domain_store import load_domain
from core import state as state_module
from core.state import (
    IntegrityError,
    SchemaMismatchError,
    apply_diff,
    canonical_serialize,
    diff,
    instantiate_state,
    parse_state,
    restore,
    snapshot,
    states_equal,
)
from core.schema import conforms, is_datetime_text


@pytest.fixture(scope="module")
def package():
    return load_domain(ROOT / "domains" / "toy_library")


def _book(book_id="BK100", **overrides):
    record = {
        "author": "Ann Leckie",
        "book_id": book_id,
        "copies": 1,
        "created_at": "2024-01-01 08:00:00",
        "title": "Ancillary Justice",
    }
    record.update(overrides)
    return record


def test_instantiate_fills_defaults(package):
    database = package.foundation.database
    state = instantiate_state(database, {"book": [{k: v for k, v in _book().items() if k != "copies"}]})

    assert state.get("book", "BK100")["copies"] == 1
    assert state.keys("loan") == []
    assert state.clock == state_module.DEFAULT_CLOCK_START


def test_instantiate_reports_every_violation(package):
    database = package.foundation.database
    records = {
        "book": [_book(), _book()],
        "loan": [
            {
                "book_id": "BK404",
                "borrower_name": "Lee",
                "loan_id": "L1",
                "loaned_at": "2024-02-01 10:00:00",
                "returned": "no",
            }
        ],
    }

    with pytest.raises(IntegrityError) as excinfo:
        instantiate_state(database, records)

    kinds = {item.kind for item in excinfo.value.violations}
    assert {"DuplicateKey", "DanglingReference", "TypeViolation"} <= kinds


def test_instantiate_rejects_unknown_table_and_bad_clock(package):
    with pytest.raises(IntegrityError) as excinfo:
        instantiate_state(package.foundation.database, {"member": []}, "yesterday")

    kinds = sorted(item.kind for item in excinfo.value.violations)
    assert kinds == ["TypeViolation", "UnknownTable"]


def test_canonical_serialize_is_order_independent(package):
    database = package.foundation.database
    first = instantiate_state(database, {"book": [_book("BK2"), _book("BK1")]})
    second = instantiate_state(database, {"book": [_book("BK1"), _book("BK2")]})

    assert canonical_serialize(first) == canonical_serialize(second)
    assert states_equal(first, second)


def test_parse_state_restores_counters_and_clock(package):
    state = package.base_state()
    state.next_id("loan", "LOAN-")
    state.advance_clock()

    restored = parse_state(canonical_serialize(state), package.foundation.database)

    assert restored.clock == "2024-03-15 09:31:00"
    assert restored.id_counters == {"loan": 1}
    assert states_equal(state, restored)


def test_snapshot_restore_returns_independent_copies(package):
    snap = snapshot(package.base_state())
    one = restore(snap)
    two = restore(snap)

    one.table("book")["BK001"]["copies"] = 9

    assert two.get("book", "BK001")["copies"] == 2


def test_next_id_skips_existing_keys(package):
    state = instantiate_state(
        package.foundation.database,
        {
            "book": [_book("LOAN-000001")],
        },
    )

    assert state.next_id("book", "LOAN-") == "LOAN-000002"
    assert state.next_id("book", "LOAN-") == "LOAN-000003"


def test_diff_and_apply_diff_reach_the_same_state(package):
    before = package.base_state()
    after = before.clone()
    after.table("book")["BK100"] = _book()
    del after.table("book")["BK003"]
    after.table("loan")["LOAN-0001"]["returned"] = True
    after.advance_clock()

    changes = diff(before, after)

    assert list(changes.tables["book"].inserted) == ["BK100"]
    assert list(changes.tables["book"].deleted) == ["BK003"]
    assert [(m.key, m.column, m.after) for m in changes.tables["loan"].modified] == [("LOAN-0001", "returned", True)]
    assert changes.clock == ("2024-03-15 09:30:00", "2024-03-15 09:31:00")
    assert states_equal(apply_diff(changes, before), after)


def test_diff_restricted_keeps_listed_keys(package):
    before = package.base_state()
    after = before.clone()
    after.table("book")["BK100"] = _book()
    after.table("book")["BK101"] = _book("BK101")

    kept = diff(before, after).restricted({"book": {"BK101"}})

    assert list(kept.tables["book"].inserted) == ["BK101"]
    assert kept.touched_keys() == {"book": {"BK101"}}


def test_apply_diff_rejects_absent_record(package):
    before = package.base_state()
    after = before.clone()
    del after.table("book")["BK003"]
    changes = diff(before, after)

    with pytest.raises(SchemaMismatchError):
        apply_diff(changes, after)


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("2024-03-05 09:30:00", True),
        ("2024-3-5 9:30:0", False),
        ("2024-03-05T09:30:00", False),
        ("2024-02-30 09:30:00", False),
        (20240305, False),
    ],
)
def test_datetime_text_must_be_canonical(text, expected):
    assert is_datetime_text(text) is expected
    assert conforms(text, "datetime") is expected
