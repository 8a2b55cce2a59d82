"""Tests for core.domain_builder module."""

from __future__ import annotations

import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from adapters.domain_store import load_domain, write_domain
from core.domain_builder import (
    DomainSynthesisError,
    design_schema,
    primary_table,
    synthesize_domain,
    tool_kind,
    write_program,
)
from core.procedural_testing import run_cases
from providers.mock import MockProvider, scripted


@pytest.fixture(scope="module")
def clinic():
    return synthesize_domain(MockProvider(), "pet_clinic", "Owners bring pets to a clinic.", ["owner", "pet"], seed=2)


def test_mock_agents_synthesize_a_working_domain(clinic):
    package, report = clinic

    assert package.name == "pet_clinic"
    assert "create_owner" in report.written
    assert sorted(package.programs) == sorted(package.foundation.tool_names)
    assert report.cases == len(package.cases) > 0
    assert run_cases(package.foundation, package.programs, package.cases).passed


def test_synthesized_domain_round_trips(clinic, tmp_path):
    package, _ = clinic

    reloaded = load_domain(write_domain(package, tmp_path / "pet_clinic"))

    assert reloaded.foundation == package.foundation
    assert [case.name for case in reloaded.cases] == [case.name for case in package.cases]


def test_tool_kind_and_primary_table(clinic):
    package, _ = clinic
    foundation = package.foundation

    assert tool_kind(foundation.tool("list_pets")) == "list"
    assert primary_table(foundation.tool("update_pet_description"), foundation).name == "pet"
    assert primary_table(foundation.tool("create_owner"), foundation).name == "owner"


def test_schema_agent_failure_is_reported():
    provider = MockProvider(scripts={"schema_agent": scripted(["no schema today"])})

    with pytest.raises(DomainSynthesisError) as excinfo:
        design_schema(provider, "pet_clinic", "", ["owner"])

    assert excinfo.value.stage == "schema"


def test_write_program_retries_until_it_parses(clinic):
    package, _ = clinic
    tool = package.foundation.tool("get_owner")
    provider = MockProvider(scripts={"code_agent": scripted(["this is not a program", package.program("get_owner").source])})

    program, problems = write_program(provider, tool, package.foundation)

    assert program is not None
    assert len(problems) == 1


def test_unwritable_programs_abort_synthesis():
    provider = MockProvider(scripts={"code_agent": scripted(["this is not a program"])})

    with pytest.raises(DomainSynthesisError) as excinfo:
        synthesize_domain(provider, "pet_clinic", "", ["owner"], max_retries=1)

    assert excinfo.value.stage == "programs"
