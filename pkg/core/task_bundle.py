"""A forged task: toolset, initial and ground-truth states, hidden intent and reward policies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Sequence, Tuple

from core.chains import ChainFormatError, ChainProgram, parse_chain
from core.domain_package import DomainPackage
from core.schema import RewardSpec, ToolSchema
from core.state import EnvState, StateSnapshot, restore


class BundleError(RuntimeError):
    """Raised when a task bundle is incomplete, corrupted or inconsistent."""


def bundle_id_for(domain: str, level: int, seed: int) -> str:
    return f"{domain}-L{level}-S{seed}"


@dataclass(frozen=True)
class TaskBundle:
    bundle_id: str
    package: DomainPackage
    toolset: Tuple[str, ...]
    initial_state: StateSnapshot
    ground_truth: StateSnapshot
    intent: str
    profile: Mapping[str, Any]
    reward_spec: RewardSpec
    level: int
    seed: int
    provenance: Mapping[str, Any] = field(default_factory=dict)

    @property
    def domain(self) -> str:
        return self.package.name

    def tools(self) -> List[ToolSchema]:
        return [self.package.foundation.tool(name) for name in self.toolset]

    def fresh_state(self) -> EnvState:
        """An independent copy of the initial state."""

        return restore(self.initial_state)

    def ground_truth_state(self) -> EnvState:
        return restore(self.ground_truth)

    def chains(self) -> List[ChainProgram]:
        try:
            return [parse_chain(item, self.package.foundation) for item in self.provenance.get("chains", [])]
        except ChainFormatError as exc:
            raise BundleError(f"{self.bundle_id}: recorded chains are invalid: {exc}") from exc

    def resolved_calls(self) -> List[List[Dict[str, Any]]]:
        """Concrete ``{tool, args}`` calls of each ground-truth chain, as executed on the initial state."""

        return [[dict(call) for call in calls] for calls in self.provenance.get("resolved_calls", [])]

    def meta(self) -> Dict[str, Any]:
        return {
            "bundle_id": self.bundle_id,
            "domain": self.domain,
            "level": self.level,
            "seed": self.seed,
            "toolset": list(self.toolset),
            "intent": self.intent,
            "profile": dict(self.profile),
            "provenance": dict(self.provenance),
        }


def toolset_problems(toolset: Sequence[str], package: DomainPackage) -> List[str]:
    known = set(package.foundation.tool_names)
    return [f"toolset names unknown tool '{name}'" for name in toolset if name not in known]


__all__ = ["BundleError", "TaskBundle", "bundle_id_for", "toolset_problems"]
