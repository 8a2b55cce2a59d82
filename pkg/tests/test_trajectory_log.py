"""Tests for adapters.trajectory_log and adapters.bundle_store."""

from __future__ import annotations

import json
import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from adapters.bundle_store import (
    BUNDLE_FILES,
    GROUND_TRUTH_FILE,
    META_FILE,
    list_bundles,
    load_bundle,
    load_bundles,
    read_final_state,
    write_bundle,
)
from adapters.trajectory_log import export_trajectories, read_trajectories
from core.agents import ReplayAgent, ScriptedAgent, ScriptedUser
from core.dependency_graph import build_graph
from core.episode import compute_group_advantages, rollout_group
from core.state import canonical_serialize
from core.task_bundle import BundleError


# ---------------------------------------------------------------------------
# Trajectory export
# ---------------------------------------------------------------------------

def _group(bundle):
    def agent_factory(seed):
        return ReplayAgent(bundle) if seed % 2 == 0 else ScriptedAgent([])

    return rollout_group(bundle, agent_factory, lambda seed: ScriptedUser(["hi"]), 4)


def test_export_writes_one_line_per_trajectory(toy_bundle, tmp_path):
    trajectories = _group(toy_bundle)
    advantages = compute_group_advantages([item.reward for item in trajectories])

    path = export_trajectories(trajectories, advantages, tmp_path / "out" / "rollouts.jsonl")

    records = read_trajectories(path)
    assert len(records) == 4
    assert [record["advantage"] for record in records] == advantages
    assert records[0] == {**trajectories[0].to_dict(), "advantage": advantages[0]}
    assert set(records[0]) == {"messages", "reward", "advantage", "stop_reason", "task_id", "seed", "turns"}


def test_export_is_byte_stable(toy_bundle, tmp_path):
    trajectories = _group(toy_bundle)
    advantages = compute_group_advantages([item.reward for item in trajectories])

    first = export_trajectories(trajectories, advantages, tmp_path / "a.jsonl").read_bytes()
    second = export_trajectories(trajectories, advantages, tmp_path / "b.jsonl").read_bytes()

    assert first == second


def test_export_empty_group_writes_empty_file(tmp_path):
    path = export_trajectories([], [], tmp_path / "empty.jsonl")

    assert path.read_text(encoding="utf-8") == ""
    assert read_trajectories(path) == []


def test_export_requires_matching_lengths(toy_bundle, tmp_path):
    with pytest.raises(ValueError):
        export_trajectories(_group(toy_bundle), [0.0], tmp_path / "bad.jsonl")


def test_read_trajectories_reports_bad_lines(tmp_path):
    path = tmp_path / "broken.jsonl"
    path.write_text('{"reward": 1}\nnot json\n', encoding="utf-8")

    with pytest.raises(ValueError) as excinfo:
        read_trajectories(path)

    assert ":2:" in str(excinfo.value)


# ---------------------------------------------------------------------------
# Bundle directories
# ---------------------------------------------------------------------------

def test_bundle_round_trip(toy_bundle, toy_package, tmp_path):
    graph = build_graph(toy_package.foundation, toy_package.programs)

    root = write_bundle(toy_bundle, graph, tmp_path)
    loaded = load_bundle(root)

    assert root.name == toy_bundle.bundle_id
    assert all((root / name).exists() for name in BUNDLE_FILES)
    assert loaded.meta() == toy_bundle.meta()
    assert loaded.initial_state.text == toy_bundle.initial_state.text
    assert loaded.ground_truth.text == toy_bundle.ground_truth.text
    assert loaded.reward_spec == toy_bundle.reward_spec
    assert "lend_book" in (root / "graph.dot").read_text(encoding="utf-8")
    assert "add_book" not in (root / "graph.dot").read_text(encoding="utf-8")


def test_load_bundle_reports_missing_files(toy_bundle, toy_package, tmp_path):
    root = write_bundle(toy_bundle, build_graph(toy_package.foundation, toy_package.programs), tmp_path)
    (root / GROUND_TRUTH_FILE).unlink()

    with pytest.raises(BundleError) as excinfo:
        load_bundle(root)

    assert GROUND_TRUTH_FILE in str(excinfo.value)


def test_load_bundle_rejects_unknown_toolset(toy_bundle, toy_package, tmp_path):
    root = write_bundle(toy_bundle, build_graph(toy_package.foundation, toy_package.programs), tmp_path)
    meta = json.loads((root / META_FILE).read_text(encoding="utf-8"))
    meta["toolset"] = ["renew_loan"]
    (root / META_FILE).write_text(json.dumps(meta), encoding="utf-8")

    with pytest.raises(BundleError) as excinfo:
        load_bundle(root)

    assert "unknown tool 'renew_loan'" in str(excinfo.value)


def test_load_bundles_skips_unreadable(toy_bundle, toy_package, tmp_path):
    graph = build_graph(toy_package.foundation, toy_package.programs)
    write_bundle(toy_bundle, graph, tmp_path)
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / META_FILE).write_text("{}", encoding="utf-8")

    bundles = load_bundles(tmp_path)

    assert len(list_bundles(tmp_path)) == 2
    assert list(bundles) == [toy_bundle.bundle_id]
    assert load_bundles(tmp_path / "nowhere") == {}


def test_read_final_state(toy_bundle, tmp_path):
    path = tmp_path / "final.state"
    path.write_text(toy_bundle.ground_truth.text, encoding="utf-8")

    state = read_final_state(path, toy_bundle)

    assert canonical_serialize(state) == toy_bundle.ground_truth.text
    with pytest.raises(BundleError):
        read_final_state(tmp_path / "absent.state", toy_bundle)
