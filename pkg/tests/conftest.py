"""Shared fixtures: the toy library domain and a small hand-built task on top of it."""

from __future__ import annotations

import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from adapters.domain_store import load_domain
from core.chains import execute_chain, parse_chain
from core.state import snapshot
from core.task_bundle import TaskBundle

TOY = ROOT / "domains" / "toy_library"

LEND_CHAIN = {
    "purpose": "Borrow The Dispossessed",
    "steps": [{"id": "c1s1", "tool": "lend_book", "args": {"book_id": "BK001", "borrower_name": "Sam Okafor"}}],
}


def build_toy_bundle(package, toolset=("get_book", "lend_book", "return_book")):
    chain = parse_chain(LEND_CHAIN, package.foundation)
    s0 = package.base_state()
    result = execute_chain(chain, s0, package)
    return TaskBundle(
        bundle_id="toy_library-L1-S0",
        package=package,
        toolset=tuple(toolset),
        initial_state=snapshot(s0),
        ground_truth=snapshot(result.final_state),
        intent='Goal: Borrow The Dispossessed\n- lend an available copy of a book to a borrower using book_id BK001 ("The Dispossessed"), borrower_name "Sam Okafor"',
        profile={"name": "Sam Okafor", "known_ids": ["BK001"]},
        reward_spec=package.foundation.reward_policies,
        level=1,
        seed=0,
        provenance={
            "chains": [chain.to_dict()],
            "resolved_calls": [[{"tool": "lend_book", "args": {"book_id": "BK001", "borrower_name": "Sam Okafor"}}]],
        },
    )


@pytest.fixture(scope="session")
def toy_package():
    return load_domain(TOY)


@pytest.fixture()
def toy_bundle(toy_package):
    return build_toy_bundle(toy_package)
