"""Pydantic models shared across HTTP routes."""

from __future__ import annotations

from typing import Any, Dict, List

from pydantic import BaseModel, ConfigDict, Field


class EpisodeCreateRequest(BaseModel):
    """Payload that opens an episode session over a served bundle."""

    model_config = ConfigDict(populate_by_name=True, extra="ignore")

    bundle_id: str = Field(..., min_length=1, description="Identifier of a loaded task bundle (for example, job_seeking-L2-S7).")
    seed: int = Field(default=0, description="Seed for the simulated user.")
    user: Dict[str, Any] | None = Field(
        default=None,
        description="Optional user override; {\"scripted\": [replies]} replaces the simulated user.",
    )


class ToolSpec(BaseModel):
    model_config = ConfigDict(extra="allow")

    name: str
    description: str | None = None


class ChatMessageModel(BaseModel):
    role: str
    content: str
    tool_calls: List[Dict[str, Any]] | None = None


class EpisodeCreateResponse(BaseModel):
    session_id: str
    system_message: str
    tool_specs: List[ToolSpec] = Field(default_factory=list)
    messages: List[ChatMessageModel] = Field(default_factory=list, description="Visible conversation so far.")
    terminated: bool = False


class StepRequest(BaseModel):
    action: Dict[str, Any] = Field(
        ...,
        description="Either {\"respond\": text} or {\"tool_calls\": [{\"tool\": name, \"args\": {...}}]}.",
    )


class ObservationModel(BaseModel):
    kind: str = Field(..., description="UserReply, ToolResults or Terminal.")
    text: str | None = None
    results: List[str] | None = None


class StepResponse(BaseModel):
    observation: ObservationModel
    terminated: bool
    stop_reason: str | None = None


class EvalResponse(BaseModel):
    reward: int
    tables: Dict[str, Any] = Field(default_factory=dict)
    stop_reason: str | None = None
    turns: int = 0


class BundleListResponse(BaseModel):
    bundles: List[str] = Field(default_factory=list)


class MessageResponse(BaseModel):
    message: str
