"""Prompt templates (``prompts/<role>.md``) and request assembly for provider roles."""

from __future__ import annotations

import json
import os
from functools import lru_cache
from pathlib import Path
from typing import Any, List, Mapping, Optional

from core.provider_service import CONTEXT_CLOSE, CONTEXT_OPEN, ROLES, ChatMessage

_PROMPTS_PATH_ENV = "ENVFORGE_PROMPTS_PATH"


def _resolve_prompts_path() -> Path:
    override = os.environ.get(_PROMPTS_PATH_ENV)
    if override:
        return Path(override)
    return Path(__file__).resolve().parents[1] / "prompts"


@lru_cache(maxsize=None)
def load_template(role: str) -> str:
    """Return the template text for ``role``."""

    if role not in ROLES:
        raise KeyError(f"Unknown provider role '{role}'. Known roles: {list(ROLES)}")
    path = _resolve_prompts_path() / f"{role}.md"
    if not path.exists():
        raise FileNotFoundError(f"Prompt template '{path}' does not exist.")
    return path.read_text(encoding="utf-8")


def render_context(context: Mapping[str, Any]) -> str:
    body = json.dumps(context, sort_keys=True, indent=2, ensure_ascii=False, default=str)
    return f"{CONTEXT_OPEN}\n{body}\n{CONTEXT_CLOSE}"


def build_messages(
    role: str,
    context: Mapping[str, Any],
    *,
    variables: Optional[Mapping[str, Any]] = None,
    history: Optional[List[ChatMessage]] = None,
) -> List[ChatMessage]:
    """System message from the role template, optional history, then the context as the final user turn."""

    system_text = load_template(role)
    # Templates carry literal JSON braces, so only named placeholders are substituted.
    for name, value in (variables or {}).items():
        system_text = system_text.replace("{" + name + "}", str(value))
    messages = [ChatMessage("system", system_text.strip())]
    messages.extend(history or [])
    messages.append(ChatMessage("user", render_context(context)))
    return messages


__all__ = ["build_messages", "load_template", "render_context"]
