"""Read and write task bundle directories."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List

from adapters.domain_store import DOMAIN_FILE, DomainStoreError, load_domain, write_domain
from core.dependency_graph import ToolDependencyGraph, to_dot
from core.domain_format import canonical_json, reward_spec_from_payload, reward_spec_to_payload
from core.schema import DomainValidationError
from core.state import EnvState, IntegrityError, StateSnapshot, canonical_serialize, parse_state
from core.task_bundle import BundleError, TaskBundle, toolset_problems

logger = logging.getLogger(__name__)

GRAPH_FILE = "graph.dot"
INITIAL_STATE_FILE = "state.init"
GROUND_TRUTH_FILE = "state.gt"
META_FILE = "task.meta"
REWARD_FILE = "reward.spec"
BUNDLE_FILES = (DOMAIN_FILE, GRAPH_FILE, INITIAL_STATE_FILE, GROUND_TRUTH_FILE, META_FILE, REWARD_FILE)


def write_bundle(bundle: TaskBundle, graph: ToolDependencyGraph, out_dir: str | Path) -> Path:
    """Write ``bundle`` under ``out_dir/<bundle_id>``; every file is canonical text."""

    root = Path(out_dir) / bundle.bundle_id
    write_domain(bundle.package, root, include_fixtures=False)
    (root / GRAPH_FILE).write_text(to_dot(graph.subgraph(bundle.toolset), bundle.bundle_id), encoding="utf-8")
    (root / INITIAL_STATE_FILE).write_text(bundle.initial_state.text, encoding="utf-8")
    (root / GROUND_TRUTH_FILE).write_text(bundle.ground_truth.text, encoding="utf-8")
    (root / META_FILE).write_text(canonical_json(bundle.meta()), encoding="utf-8")
    (root / REWARD_FILE).write_text(canonical_json(reward_spec_to_payload(bundle.reward_spec)), encoding="utf-8")
    logger.info("[bundle] wrote %s to %s", bundle.bundle_id, root)
    return root


def _read(root: Path, name: str) -> str:
    path = root / name
    if not path.exists():
        raise BundleError(f"'{root}' is missing {name}")
    return path.read_text(encoding="utf-8")


def _read_json(root: Path, name: str) -> Any:
    try:
        return json.loads(_read(root, name))
    except json.JSONDecodeError as exc:
        raise BundleError(f"{root / name}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def load_bundle(path: str | Path) -> TaskBundle:
    """Load a bundle directory written by :func:`write_bundle`; any inconsistency raises :class:`BundleError`."""

    root = Path(path)
    if not root.is_dir():
        raise BundleError(f"'{root}' is not a bundle directory")
    try:
        package = load_domain(root)
    except (DomainStoreError, DomainValidationError) as exc:
        raise BundleError(f"{root}: domain is invalid: {exc}") from exc

    database = package.foundation.database
    states = {}
    for name in (INITIAL_STATE_FILE, GROUND_TRUTH_FILE):
        text = _read(root, name)
        try:
            state = parse_state(text, database)
        except (IntegrityError, ValueError) as exc:
            raise BundleError(f"{root / name}: {exc}") from exc
        states[name] = StateSnapshot(database=database, text=canonical_serialize(state))

    meta = _read_json(root, META_FILE)
    if not isinstance(meta, dict):
        raise BundleError(f"{root / META_FILE}: expected an object")
    try:
        reward_spec = reward_spec_from_payload(_read_json(root, REWARD_FILE))
    except DomainValidationError as exc:
        raise BundleError(f"{root / REWARD_FILE}: {exc}") from exc

    toolset = tuple(str(name) for name in meta.get("toolset", []))
    problems = toolset_problems(toolset, package)
    if problems or not toolset:
        raise BundleError(f"{root / META_FILE}: " + ("; ".join(problems) or "toolset is empty"))

    bundle = TaskBundle(
        bundle_id=str(meta.get("bundle_id") or root.name),
        package=package,
        toolset=toolset,
        initial_state=states[INITIAL_STATE_FILE],
        ground_truth=states[GROUND_TRUTH_FILE],
        intent=str(meta.get("intent", "")),
        profile=dict(meta.get("profile") or {}),
        reward_spec=reward_spec,
        level=int(meta.get("level", 0)),
        seed=int(meta.get("seed", 0)),
        provenance=dict(meta.get("provenance") or {}),
    )
    bundle.chains()
    return bundle


def list_bundles(directory: str | Path) -> List[Path]:
    root = Path(directory)
    if not root.is_dir():
        return []
    return sorted(path for path in root.iterdir() if (path / META_FILE).exists())


def load_bundles(directory: str | Path) -> Dict[str, TaskBundle]:
    """Every bundle under ``directory`` keyed by id; unreadable bundles are logged and skipped."""

    bundles: Dict[str, TaskBundle] = {}
    for path in list_bundles(directory):
        try:
            bundle = load_bundle(path)
        except BundleError:
            logger.exception("[bundle] skipping unreadable bundle %s", path)
            continue
        bundles[bundle.bundle_id] = bundle
    return bundles


def read_final_state(path: str | Path, bundle: TaskBundle) -> EnvState:
    """Parse a final-state document against the bundle's schema."""

    try:
        return parse_state(Path(path).read_text(encoding="utf-8"), bundle.package.foundation.database)
    except (OSError, IntegrityError, ValueError) as exc:
        raise BundleError(f"{path}: {exc}") from exc


__all__ = [
    "BUNDLE_FILES",
    "GRAPH_FILE",
    "GROUND_TRUTH_FILE",
    "INITIAL_STATE_FILE",
    "META_FILE",
    "REWARD_FILE",
    "list_bundles",
    "load_bundle",
    "load_bundles",
    "read_final_state",
    "write_bundle",
]
