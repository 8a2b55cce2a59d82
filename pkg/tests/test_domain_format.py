"""Tests for core.domain_format, core.domain_package and adapters.domain_store."""

from __future__ import annotations

import json
import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from adapters.domain_store import DomainStoreError, load_domain, read_program_texts, write_domain
from core.domain_format import domain_to_payload, parse_domain, serialize_domain
from core.domain_package import build_package
from core.schema import DomainSyntaxError, DomainValidationError

TOY = ROOT / "domains" / "toy_library"


def _payload():
    return json.loads((TOY / "domain.env").read_text(encoding="utf-8"))


def test_serialize_is_canonical_and_idempotent():
    foundation = parse_domain((TOY / "domain.env").read_text(encoding="utf-8"))

    text = serialize_domain(foundation)

    assert text.endswith("\n")
    assert serialize_domain(parse_domain(text)) == text
    assert parse_domain(text) == foundation


def test_serialize_sorts_tools_and_tables():
    payload = _payload()
    payload["tools"] = list(reversed(payload["tools"]))
    payload["database"]["tables"] = list(reversed(payload["database"]["tables"]))

    text = serialize_domain(parse_domain(json.dumps(payload)))

    names = [tool["name"] for tool in json.loads(text)["tools"]]
    assert names == sorted(names)


def test_invalid_json_reports_position():
    with pytest.raises(DomainSyntaxError) as excinfo:
        parse_domain('{"domain_name": "x",\n  "tools": [}')

    assert excinfo.value.line == 2


def test_validation_collects_every_violation():
    payload = _payload()
    payload["domain_name"] = "toy library"
    payload["tools"].append(dict(payload["tools"][0]))
    payload["database"]["tables"][1]["foreign_keys"] = [{"column": "book_id", "references": "shelf.shelf_id"}]
    del payload["reward_policies"]["policies"]["book"]["title"]

    with pytest.raises(DomainValidationError) as excinfo:
        parse_domain(json.dumps(payload))

    joined = "\n".join(excinfo.value.violations)
    assert "domain_name 'toy library' is not an identifier" in joined
    assert "duplicate tool name 'add_book'" in joined
    assert "unknown table 'shelf'" in joined
    assert "column 'book.title' has no reward policy" in joined


def test_non_nullable_foreign_key_cycle_is_rejected():
    payload = _payload()
    book = payload["database"]["tables"][0]
    book["columns"].append({"name": "last_loan", "type": "string", "nullable": False, "default": None})
    book["foreign_keys"] = [{"column": "last_loan", "references": "loan.loan_id"}]
    payload["reward_policies"]["policies"]["book"]["last_loan"] = "Hard"

    with pytest.raises(DomainValidationError) as excinfo:
        parse_domain(json.dumps(payload))

    assert any("foreign key cycle" in item for item in excinfo.value.violations)


def test_build_package_cross_checks_mapping_and_generated_keys():
    payload = _payload()
    payload["mapping"]["get_book"] = {"reads": ["book", "loan"], "writes": []}
    payload["reward_policies"]["policies"]["loan"]["loan_id"] = "Hard"
    foundation = parse_domain(json.dumps(payload))

    with pytest.raises(DomainValidationError) as excinfo:
        build_package(foundation, read_program_texts(TOY))

    joined = "\n".join(excinfo.value.violations)
    assert "mapping for tool 'get_book'" in joined
    assert "generated key 'loan.loan_id' must be Exempt" in joined


def test_build_package_reports_missing_and_extra_programs():
    foundation = parse_domain((TOY / "domain.env").read_text(encoding="utf-8"))
    texts = read_program_texts(TOY)
    texts.pop("get_book")
    texts["renew_loan"] = "return {}\n"

    with pytest.raises(DomainValidationError) as excinfo:
        build_package(foundation, texts)

    joined = "\n".join(excinfo.value.violations)
    assert "tool 'get_book' has no effect program" in joined
    assert "effect program 'renew_loan' does not match a declared tool" in joined


def test_load_domain_reads_fixtures():
    package = load_domain(TOY)

    assert package.name == "toy_library"
    assert sorted(package.programs) == sorted(package.foundation.tool_names)
    assert len(package.cases) == 11
    assert package.base_state().keys("book") == ["BK001", "BK002", "BK003"]


def test_load_domain_requires_domain_file(tmp_path):
    with pytest.raises(DomainStoreError):
        load_domain(tmp_path)


def test_write_domain_round_trips(tmp_path):
    package = load_domain(TOY)

    target = write_domain(package, tmp_path / "copy")
    reloaded = load_domain(target)

    assert reloaded.foundation == package.foundation
    assert reloaded.seed_records == package.seed_records
    assert [case.name for case in reloaded.cases] == [case.name for case in package.cases]
    assert domain_to_payload(reloaded.foundation) == domain_to_payload(package.foundation)


def test_write_domain_can_skip_fixtures(tmp_path):
    target = write_domain(load_domain(TOY), tmp_path / "bare", include_fixtures=False)

    assert not (target / "records.json").exists()
    assert not (target / "cases.json").exists()
    assert load_domain(target).cases == ()
