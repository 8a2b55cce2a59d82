"""JSON Lines export of scored trajectories for policy-optimisation consumers."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence

from core.episode import Trajectory

logger = logging.getLogger(__name__)


def trajectory_record(trajectory: Trajectory, advantage: float) -> Dict[str, Any]:
    record = trajectory.to_dict()
    record["advantage"] = advantage
    return record


def _line(record: Dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def export_trajectories(trajectories: Sequence[Trajectory], advantages: Sequence[float], path: str | Path) -> Path:
    """Write one canonical JSON object per trajectory, in group order."""

    if len(trajectories) != len(advantages):
        raise ValueError(f"{len(trajectories)} trajectories but {len(advantages)} advantages")
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    lines = [_line(trajectory_record(item, advantage)) for item, advantage in zip(trajectories, advantages)]
    target.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    logger.info("[trajectories] wrote %s record(s) to %s", len(lines), target)
    return target


def read_trajectories(path: str | Path) -> List[Dict[str, Any]]:
    records = []
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{number}: invalid JSON: {exc.msg}") from exc
    return records


__all__ = ["export_trajectories", "read_trajectories", "trajectory_record"]
