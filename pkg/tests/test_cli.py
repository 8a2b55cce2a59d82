"""Tests for core.cli module."""

from __future__ import annotations

import json
import pathlib
import shutil
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from adapters.bundle_store import write_bundle
from adapters.trajectory_log import read_trajectories
from core import cli
from core.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from core.dependency_graph import build_graph

TOY = ROOT / "domains" / "toy_library"


@pytest.fixture()
def bundle_dir(toy_bundle, toy_package, tmp_path):
    return write_bundle(toy_bundle, build_graph(toy_package.foundation, toy_package.programs), tmp_path / "bundles")


@pytest.fixture()
def user_file(tmp_path):
    path = tmp_path / "user.json"
    path.write_text(json.dumps(["Please lend me The Dispossessed."]), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def test_unknown_command_is_usage_error():
    assert main(["teleport"]) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "forge" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# Domain tooling
# ---------------------------------------------------------------------------

def test_domain_validate_directory(capsys):
    assert main(["domain", "validate", str(TOY)]) == EXIT_OK

    assert capsys.readouterr().out.strip() == "OK toy_library: 6 tools, 2 tables, 11 cases"


def test_domain_validate_reports_violations(tmp_path, capsys):
    payload = json.loads((TOY / "domain.env").read_text(encoding="utf-8"))
    payload["domain_name"] = "toy library"
    broken = tmp_path / "broken.env"
    broken.write_text(json.dumps(payload), encoding="utf-8")

    assert main(["domain", "validate", str(broken)]) == EXIT_FAILURE

    assert "not an identifier" in capsys.readouterr().err


def test_domain_fmt_check_and_write(tmp_path, capsys):
    target = tmp_path / "domain.env"
    shutil.copy(TOY / "domain.env", target)

    assert main(["domain", "fmt", "--check", str(target)]) == EXIT_FAILURE
    assert main(["domain", "fmt", "--write", str(target)]) == EXIT_OK
    assert main(["domain", "fmt", "--check", str(target)]) == EXIT_OK
    capsys.readouterr()

    assert main(["domain", "fmt", str(target)]) == EXIT_OK
    assert capsys.readouterr().out == target.read_text(encoding="utf-8")


def test_domain_fmt_rejects_invalid_json(tmp_path):
    target = tmp_path / "domain.env"
    target.write_text("{", encoding="utf-8")

    assert main(["domain", "fmt", str(target)]) == EXIT_FAILURE


def test_tool_test_runs_shipped_cases(capsys):
    assert main(["tool", "test", str(TOY)]) == EXIT_OK

    assert "11 passed, 0 failed" in capsys.readouterr().out


def test_tool_test_filters_by_tool(capsys):
    assert main(["tool", "test", str(TOY), "--tool", "get_book"]) == EXIT_OK

    assert "2 passed, 0 failed" in capsys.readouterr().out


def test_graph_build_writes_dot_and_metrics(tmp_path):
    target = tmp_path / "graphs" / "toy.dot"

    assert main(["graph", "build", str(TOY), "-o", str(target)]) == EXIT_OK

    assert target.read_text(encoding="utf-8").startswith('digraph "toy_library"')
    assert json.loads(target.with_suffix(".metrics.json").read_text(encoding="utf-8"))


def test_stats_lists_each_domain(capsys):
    assert main(["stats", str(ROOT / "domains")]) == EXIT_OK

    out = capsys.readouterr().out
    assert "toy_library" in out
    assert "job_seeking" in out


def test_stats_requires_domains(tmp_path):
    assert main(["stats", str(tmp_path)]) == EXIT_FAILURE


# ---------------------------------------------------------------------------
# Forge, run, eval and state
# ---------------------------------------------------------------------------

def test_forge_validates_level(tmp_path):
    assert main(["forge", "--domain", str(TOY), "--level", "4", "-o", str(tmp_path)]) == EXIT_USAGE


def test_run_then_eval(bundle_dir, user_file, tmp_path, capsys):
    output = tmp_path / "rollouts.jsonl"
    finals = tmp_path / "finals"

    code = main(
        [
            "run",
            "--bundle", str(bundle_dir),
            "--agent", "replay",
            "--user", f"scripted:{user_file}",
            "--group", "2",
            "--seed", "5",
            "--final-dir", str(finals),
            "-o", str(output),
        ]
    )

    assert code == EXIT_OK
    records = read_trajectories(output)
    assert [record["seed"] for record in records] == [5, 6]
    assert [record["reward"] for record in records] == [1, 1]
    assert [record["advantage"] for record in records] == [0.0, 0.0]

    capsys.readouterr()
    assert main(["eval", "--bundle", str(bundle_dir), "--final", str(finals / "seed-5.state")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["reward"] == 1


def test_eval_of_untouched_state_fails(bundle_dir, tmp_path, capsys):
    initial = tmp_path / "initial.state"
    assert main(["state", "--bundle", str(bundle_dir)]) == EXIT_OK
    initial.write_text(capsys.readouterr().out, encoding="utf-8")

    assert main(["eval", "--bundle", str(bundle_dir), "--final", str(initial)]) == EXIT_FAILURE
    assert json.loads(capsys.readouterr().out)["reward"] == 0


def test_state_prints_ground_truth(bundle_dir, toy_bundle, capsys):
    assert main(["state", "--bundle", str(bundle_dir), "--ground-truth"]) == EXIT_OK

    assert capsys.readouterr().out == toy_bundle.ground_truth.text


def test_run_rejects_unknown_agent(bundle_dir, user_file, tmp_path):
    code = main(["run", "--bundle", str(bundle_dir), "--agent", "oracle", "--user", f"scripted:{user_file}", "-o", str(tmp_path / "x.jsonl")])

    assert code == EXIT_USAGE


def test_run_reports_missing_bundle(user_file, tmp_path):
    code = main(["run", "--bundle", str(tmp_path / "absent"), "--user", f"scripted:{user_file}", "-o", str(tmp_path / "x.jsonl")])

    assert code == EXIT_FAILURE


def test_serve_requires_functions_host(monkeypatch, tmp_path, capsys):
    monkeypatch.setattr(cli.shutil, "which", lambda name: None)

    assert main(["serve", str(tmp_path)]) == EXIT_FAILURE
    assert "func" in capsys.readouterr().err
