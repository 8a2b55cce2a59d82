"""Command-line entry points: domain tooling, forging, rollouts, evaluation and serving."""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import subprocess
import sys
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from adapters.bundle_store import load_bundle, read_final_state, write_bundle
from adapters.domain_store import DOMAIN_FILE, DomainStoreError, load_domain, read_cases, write_domain
from adapters.trajectory_log import export_trajectories
from core.agents import ProviderAgent, ProviderUser, ReplayAgent, ScriptedAgent, ScriptedUser
from core.dependency_graph import build_graph, domain_statistics, metrics_document, to_dot
from core.domain_builder import DomainSynthesisError, synthesize_domain
from core.domain_format import parse_domain, serialize_domain
from core.episode import EpisodeConfig, compute_group_advantages, rollout_group
from core.procedural_testing import CaseFormatError, FixtureError, debug_loop, run_cases
from core.provider_service import ProviderError, build_provider_bundle, get_provider_bundle, set_provider_bundle
from core.reward import evaluate
from core.schema import DomainValidationError
from core.settings import EngineSettings, load_settings
from core.state import canonical_serialize
from core.task_bundle import BundleError
from core.task_forge import ForgeFailed, forge_task

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    """Raised for invalid option values that argparse cannot detect."""


def setup_logging(verbose: bool = False) -> None:
    root = logging.getLogger()
    for handler in root.handlers[:]:
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)


def _print_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    cells = [[str(item) for item in headers]] + [[str(item) for item in row] for row in rows]
    widths = [max(len(row[index]) for row in cells) for index in range(len(headers))]
    for row in cells:
        print("  ".join(value.ljust(widths[index]) for index, value in enumerate(row)).rstrip())


# ---------------------------------------------------------------------- domain


def _cmd_domain_validate(args: argparse.Namespace, settings: EngineSettings) -> int:
    path = Path(args.path)
    if path.is_dir():
        package = load_domain(path)
        print(f"OK {package.name}: {len(package.foundation.tools)} tools, {len(package.foundation.database.tables)} tables, {len(package.cases)} cases")
    else:
        foundation = parse_domain(path.read_text(encoding="utf-8"))
        print(f"OK {foundation.domain_name}: {len(foundation.tools)} tools, {len(foundation.database.tables)} tables")
    return EXIT_OK


def _cmd_domain_fmt(args: argparse.Namespace, settings: EngineSettings) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / DOMAIN_FILE
    text = path.read_text(encoding="utf-8")
    canonical = serialize_domain(parse_domain(text))
    if args.check:
        if canonical != text:
            print(f"{path} is not canonical", file=sys.stderr)
            return EXIT_FAILURE
        return EXIT_OK
    if args.write:
        path.write_text(canonical, encoding="utf-8")
    else:
        sys.stdout.write(canonical)
    return EXIT_OK


def _cmd_domain_synth(args: argparse.Namespace, settings: EngineSettings) -> int:
    entities = [item.strip() for item in args.entities.split(",") if item.strip()]
    if not entities:
        raise UsageError("--entities needs at least one entity name")
    package, report = synthesize_domain(
        get_provider_bundle(),
        args.name,
        args.description,
        entities,
        seed=args.seed,
        max_retries=args.max_retries,
    )
    root = write_domain(package, args.output)
    print(json.dumps({"domain": str(root), "report": report.to_dict()}, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------- graph / tools


def _cmd_graph_build(args: argparse.Namespace, settings: EngineSettings) -> int:
    package = load_domain(args.domain)
    provider = get_provider_bundle() if args.refine else None
    graph = build_graph(package.foundation, package.programs, provider, seed=args.seed)
    dot = to_dot(graph, package.name)
    metrics = metrics_document(graph)
    if args.output:
        target = Path(args.output)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(dot, encoding="utf-8")
        target.with_suffix(".metrics.json").write_text(metrics, encoding="utf-8")
        print(f"wrote {target} and {target.with_suffix('.metrics.json')}")
    else:
        sys.stdout.write(dot)
        sys.stdout.write(metrics)
    return EXIT_OK


def _cmd_tool_test(args: argparse.Namespace, settings: EngineSettings) -> int:
    package = load_domain(args.domain)
    cases = read_cases(Path(args.cases)) if args.cases else list(package.cases)
    if args.tool:
        cases = [case for case in cases if case.tool == args.tool]
    report = run_cases(package.foundation, package.programs, cases, seed_records=package.seed_records, clock_start=settings.forge.clock_start)
    _print_table(("tool", "case", "verdict", "detail"), report.to_rows())
    print(f"{len(report.verdicts) - len(report.failures)} passed, {len(report.failures)} failed")

    if report.failures and args.debug:
        provider = get_provider_bundle()
        for tool in sorted({verdict.tool for verdict in report.failures}):
            outcome = debug_loop(provider, package.foundation, tool, package.program(tool), cases, seed_records=package.seed_records)
            status = "gave up" if outcome.gave_up else f"repaired after {outcome.attempts} attempt(s)"
            print(f"debug {tool}: {status}")
    return EXIT_OK if report.passed else EXIT_FAILURE


def _cmd_stats(args: argparse.Namespace, settings: EngineSettings) -> int:
    rows = []
    for directory in args.domains:
        root = Path(directory)
        targets = [root] if (root / DOMAIN_FILE).exists() else sorted(p for p in root.iterdir() if (p / DOMAIN_FILE).exists())
        if not targets:
            raise DomainStoreError(f"'{root}' holds no domain directories")
        for target in targets:
            package = load_domain(target)
            stats = domain_statistics(package.foundation, build_graph(package.foundation, package.programs))
            rows.append((stats["domain"], stats["tools"], stats["tables"], stats["edges"], f"{stats['density']:.4f}"))
    _print_table(("domain", "tools", "tables", "edges", "density"), rows)
    return EXIT_OK


# ---------------------------------------------------------------------- forge / run / eval


def _cmd_forge(args: argparse.Namespace, settings: EngineSettings) -> int:
    if args.level not in (1, 2, 3):
        raise UsageError("--level must be 1, 2 or 3")
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    package = load_domain(args.domain)
    providers = get_provider_bundle()
    graph = build_graph(package.foundation, package.programs)
    failures = 0
    for seed in range(args.seed, args.seed + args.count):
        try:
            bundle = forge_task(providers, package, graph, args.level, seed, settings.forge, tau=args.tau)
        except ForgeFailed as exc:
            failures += 1
            print(f"forge failed for seed {seed}: {exc}", file=sys.stderr)
            continue
        print(write_bundle(bundle, graph, args.output))
    return EXIT_OK if failures == 0 else EXIT_FAILURE


def _read_json_file(path: str) -> object:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc.msg}") from exc


def _agent_factory(spec: str, bundle) -> Callable[[int], object]:
    if spec == "replay":
        return lambda seed: ReplayAgent(bundle)
    if spec == "provider":
        providers = get_provider_bundle()
        return lambda seed: ProviderAgent(providers, domain=bundle.domain, seed=seed)
    if spec.startswith("scripted:"):
        actions = _read_json_file(spec.split(":", 1)[1])
        if not isinstance(actions, list):
            raise UsageError("scripted agent file must hold a list of actions")
        ScriptedAgent.from_payload(actions)
        return lambda seed: ScriptedAgent.from_payload(actions)
    raise UsageError(f"unknown agent '{spec}' (expected replay, provider or scripted:<file>)")


def _user_factory(spec: str) -> Callable[[int], object]:
    if spec == "provider":
        providers = get_provider_bundle()
        return lambda seed: ProviderUser(providers, seed=seed)
    if spec.startswith("scripted:"):
        replies = _read_json_file(spec.split(":", 1)[1])
        if not isinstance(replies, list) or not all(isinstance(item, str) for item in replies):
            raise UsageError("scripted user file must hold a list of strings")
        return lambda seed: ScriptedUser(replies)
    raise UsageError(f"unknown user '{spec}' (expected provider or scripted:<file>)")


def _cmd_run(args: argparse.Namespace, settings: EngineSettings) -> int:
    if args.group < 1:
        raise UsageError("--group must be at least 1")
    bundle = load_bundle(args.bundle)
    seeds = list(range(args.seed, args.seed + args.group))
    trajectories = rollout_group(
        bundle,
        _agent_factory(args.agent, bundle),
        _user_factory(args.user),
        args.group,
        seeds,
        EpisodeConfig.from_settings(settings.episode),
        workers=settings.episode.group_workers,
    )
    advantages = compute_group_advantages([item.reward for item in trajectories])
    export_trajectories(trajectories, advantages, args.output)
    if args.final_dir:
        final_dir = Path(args.final_dir)
        final_dir.mkdir(parents=True, exist_ok=True)
        for item in trajectories:
            (final_dir / f"seed-{item.seed}.state").write_text(item.final_state, encoding="utf-8")
    _print_table(
        ("seed", "reward", "advantage", "turns", "stop"),
        [(t.seed, t.reward, f"{a:+.4f}", t.turns, t.stop_reason) for t, a in zip(trajectories, advantages)],
    )
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace, settings: EngineSettings) -> int:
    bundle = load_bundle(args.bundle)
    final = read_final_state(args.final, bundle)
    report = evaluate(final, bundle.ground_truth_state(), bundle.reward_spec)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False))
    return EXIT_OK if report.reward == 1 else EXIT_FAILURE


def _cmd_show_state(args: argparse.Namespace, settings: EngineSettings) -> int:
    bundle = load_bundle(args.bundle)
    state = bundle.ground_truth_state() if args.ground_truth else bundle.fresh_state()
    sys.stdout.write(canonical_serialize(state))
    return EXIT_OK


# ---------------------------------------------------------------------- serve


def _cmd_serve(args: argparse.Namespace, settings: EngineSettings) -> int:
    func_cli = shutil.which("func")
    if func_cli is None:
        print("Azure Functions Core Tools ('func') are not on PATH; install them to serve episodes.", file=sys.stderr)
        return EXIT_FAILURE
    bundles = Path(args.bundles or settings.server.bundles_path).resolve()
    if not bundles.is_dir():
        print(f"bundle directory '{bundles}' does not exist", file=sys.stderr)
        return EXIT_FAILURE
    port = args.port or settings.server.port
    env = dict(os.environ, ENVFORGE_BUNDLES_PATH=str(bundles))
    root = Path(__file__).resolve().parents[1]
    print(f"serving {bundles} on port {port}")
    return subprocess.call([func_cli, "start", "--port", str(port)], cwd=root, env=env)


# ---------------------------------------------------------------------- parser


def get_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="envforge", description="Synthesize verifiable tool-use environments and run episodes.")
    parser.add_argument("--config", help="Path to an envforge.toml (defaults to ENVFORGE_CONFIG or the repo copy).")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress to stderr.")
    commands = parser.add_subparsers(dest="command", required=True)

    domain = commands.add_parser("domain", help="Validate, format or synthesize domain definitions.")
    domain_commands = domain.add_subparsers(dest="domain_command", required=True)
    validate = domain_commands.add_parser("validate", help="Validate a domain file or directory.")
    validate.add_argument("path")
    validate.set_defaults(handler=_cmd_domain_validate)
    fmt = domain_commands.add_parser("fmt", help="Print the canonical form of a domain file.")
    fmt.add_argument("path")
    fmt_mode = fmt.add_mutually_exclusive_group()
    fmt_mode.add_argument("--write", action="store_true", help="Rewrite the file in place.")
    fmt_mode.add_argument("--check", action="store_true", help="Exit 1 when the file is not canonical.")
    fmt.set_defaults(handler=_cmd_domain_fmt)
    synth = domain_commands.add_parser("synth", help="Synthesize a domain with the schema, code and test agents.")
    synth.add_argument("--name", required=True)
    synth.add_argument("--description", default="")
    synth.add_argument("--entities", required=True, help="Comma-separated entity names.")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--max-retries", type=int, default=3)
    synth.add_argument("-o", "--output", required=True)
    synth.set_defaults(handler=_cmd_domain_synth)

    graph = commands.add_parser("graph", help="Tool dependency graphs.")
    graph_commands = graph.add_subparsers(dest="graph_command", required=True)
    build = graph_commands.add_parser("build", help="Build the dependency graph of a domain.")
    build.add_argument("domain")
    build.add_argument("-o", "--output")
    build.add_argument("--refine", action="store_true", help="Let the dependency agent prune edges.")
    build.add_argument("--seed", type=int, default=0)
    build.set_defaults(handler=_cmd_graph_build)

    tool = commands.add_parser("tool", help="Procedural tests for tool programs.")
    tool_commands = tool.add_subparsers(dest="tool_command", required=True)
    test = tool_commands.add_parser("test", help="Run procedural test cases.")
    test.add_argument("domain")
    test.add_argument("--cases", help="Case file (defaults to the domain's cases.json).")
    test.add_argument("--tool", help="Only run cases for this tool.")
    test.add_argument("--debug", action="store_true", help="Ask the debug agent to repair failing tools.")
    test.set_defaults(handler=_cmd_tool_test)

    forge = commands.add_parser("forge", help="Forge task bundles.")
    forge.add_argument("--domain", required=True)
    forge.add_argument("--level", type=int, default=2)
    forge.add_argument("--seed", type=int, default=0)
    forge.add_argument("--count", type=int, default=1, help="Forge consecutive seeds starting at --seed.")
    forge.add_argument("--tau", type=float, default=None)
    forge.add_argument("-o", "--output", required=True)
    forge.set_defaults(handler=_cmd_forge)

    run = commands.add_parser("run", help="Roll out a group of episodes and export trajectories.")
    run.add_argument("--bundle", required=True)
    run.add_argument("--agent", default="replay", help="replay, provider or scripted:<file>")
    run.add_argument("--user", default="provider", help="provider or scripted:<file>")
    run.add_argument("--group", type=int, default=4)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--final-dir", help="Also write each episode's final state here.")
    run.add_argument("-o", "--output", required=True)
    run.set_defaults(handler=_cmd_run)

    evaluate_cmd = commands.add_parser("eval", help="Score a final state against a bundle's ground truth.")
    evaluate_cmd.add_argument("--bundle", required=True)
    evaluate_cmd.add_argument("--final", required=True)
    evaluate_cmd.set_defaults(handler=_cmd_eval)

    state = commands.add_parser("state", help="Print a bundle's initial or ground-truth state.")
    state.add_argument("--bundle", required=True)
    state.add_argument("--ground-truth", action="store_true")
    state.set_defaults(handler=_cmd_show_state)

    serve = commands.add_parser("serve", help="Serve episodes over HTTP through the Functions host.")
    serve.add_argument("bundles", nargs="?")
    serve.add_argument("--port", type=int)
    serve.set_defaults(handler=_cmd_serve)

    stats = commands.add_parser("stats", help="Per-domain tool, table and density counts.")
    stats.add_argument("domains", nargs="+")
    stats.set_defaults(handler=_cmd_stats)
    return parser


_FAILURES = (
    BundleError,
    CaseFormatError,
    DomainStoreError,
    DomainSynthesisError,
    DomainValidationError,
    FixtureError,
    OSError,
    ProviderError,
    ValueError,
)


def main(argv: Optional[List[str]] = None) -> int:
    parser = get_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    setup_logging(args.verbose)

    try:
        settings = load_settings(args.config)
        if args.config:
            set_provider_bundle(build_provider_bundle(settings.provider.mode, **settings.provider.remote_options()))
        return args.handler(args, settings)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainValidationError as exc:
        print("error: domain is invalid:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  - {violation}", file=sys.stderr)
        return EXIT_FAILURE
    except _FAILURES as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


__all__ = ["EXIT_FAILURE", "EXIT_OK", "EXIT_USAGE", "get_parser", "main"]
