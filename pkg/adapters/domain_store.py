"""Read and write domain directories (``domain.env``, ``tools/*.effect``, seed records, cases)."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from core.domain_format import canonical_json, parse_domain, serialize_domain
from core.domain_package import DomainPackage, build_package
from core.procedural_testing import CaseFormatError, ProceduralTestCase, cases_from_payload

logger = logging.getLogger(__name__)

DOMAIN_FILE = "domain.env"
TOOLS_DIR = "tools"
PROGRAM_SUFFIX = ".effect"
RECORDS_FILE = "records.json"
CASES_FILE = "cases.json"


class DomainStoreError(RuntimeError):
    """Raised when a domain directory is missing or unreadable."""


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DomainStoreError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def read_program_texts(directory: Path) -> Dict[str, str]:
    tools_dir = directory / TOOLS_DIR
    if not tools_dir.is_dir():
        return {}
    return {
        path.name[: -len(PROGRAM_SUFFIX)]: path.read_text(encoding="utf-8")
        for path in sorted(tools_dir.glob(f"*{PROGRAM_SUFFIX}"))
    }


def read_cases(path: Path) -> list[ProceduralTestCase]:
    try:
        return cases_from_payload(_read_json(path))
    except CaseFormatError as exc:
        raise DomainStoreError(f"{path}: {exc}") from exc


def load_domain(directory: str | Path, *, cases_path: Optional[str | Path] = None) -> DomainPackage:
    """Load and validate the domain stored in ``directory``."""

    root = Path(directory)
    domain_file = root / DOMAIN_FILE
    if not domain_file.exists():
        raise DomainStoreError(f"'{root}' is not a domain directory: {DOMAIN_FILE} is missing")

    foundation = parse_domain(domain_file.read_text(encoding="utf-8"))
    records_file = root / RECORDS_FILE
    seed_records = _read_json(records_file) if records_file.exists() else {}
    if not isinstance(seed_records, dict):
        raise DomainStoreError(f"{records_file}: expected an object of per-table record lists")

    case_file = Path(cases_path) if cases_path else root / CASES_FILE
    cases = read_cases(case_file) if case_file.exists() else []

    package = build_package(foundation, read_program_texts(root), seed_records, cases)
    logger.info(
        "[domain] loaded %s from %s (%s tools, %s tables)",
        package.name,
        root,
        len(foundation.tools),
        len(foundation.database.tables),
    )
    return package


def write_domain(package: DomainPackage, directory: str | Path, *, include_fixtures: bool = True) -> Path:
    """Write ``package`` canonically; returns the directory written."""

    root = Path(directory)
    (root / TOOLS_DIR).mkdir(parents=True, exist_ok=True)
    (root / DOMAIN_FILE).write_text(serialize_domain(package.foundation), encoding="utf-8")
    for name, program in sorted(package.programs.items()):
        (root / TOOLS_DIR / f"{name}{PROGRAM_SUFFIX}").write_text(program.source, encoding="utf-8")
    if include_fixtures and package.seed_records:
        (root / RECORDS_FILE).write_text(canonical_json(_records_payload(package.seed_records)), encoding="utf-8")
    if include_fixtures and package.cases:
        payload = {"cases": [case.to_dict() for case in package.cases]}
        (root / CASES_FILE).write_text(canonical_json(payload), encoding="utf-8")
    return root


def _records_payload(records: Mapping[str, Any]) -> Dict[str, Any]:
    return {table: list(rows) for table, rows in sorted(records.items())}


__all__ = [
    "CASES_FILE",
    "DOMAIN_FILE",
    "DomainStoreError",
    "PROGRAM_SUFFIX",
    "RECORDS_FILE",
    "TOOLS_DIR",
    "load_domain",
    "read_cases",
    "read_program_texts",
    "write_domain",
]
