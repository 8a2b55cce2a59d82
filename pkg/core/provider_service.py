"""Provider contract shared by every model-backed role in the forge and episode loops."""

from __future__ import annotations

import hashlib
import importlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Protocol, Sequence, Tuple

logger = logging.getLogger(__name__)

ROLES: Tuple[str, ...] = (
    "agent",
    "chain_proposer",
    "code_agent",
    "debug_agent",
    "dependency_agent",
    "gating",
    "instruction_writer",
    "oracle",
    "schema_agent",
    "state_builder",
    "test_agent",
    "user_simulator",
)

CONTEXT_OPEN = "<context>"
CONTEXT_CLOSE = "</context>"
_CONTEXT_RE = re.compile(re.escape(CONTEXT_OPEN) + r"\s*(.*?)\s*" + re.escape(CONTEXT_CLOSE), re.DOTALL)
_JSON_BLOCK_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


class ProviderError(RuntimeError):
    """Raised when a provider cannot produce a usable response."""

    def __init__(self, kind: str, message: str) -> None:
        super().__init__(f"[{kind}] {message}")
        self.kind = kind


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def to_dict(self) -> Dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.0
    max_output_tokens: int = 2048
    seed: int = 0


@dataclass(frozen=True)
class ProviderRequest:
    role: str
    messages: Tuple[ChatMessage, ...]
    sampling: SamplingParams = SamplingParams()

    def digest(self) -> str:
        """Stable fingerprint of the role and conversation."""

        payload = json.dumps(
            {"role": self.role, "messages": [message.to_dict() for message in self.messages]},
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def context(self) -> Dict[str, Any]:
        """Decode the structured context embedded in the last user message (empty when absent)."""

        for message in reversed(self.messages):
            if message.role != "user":
                continue
            match = _CONTEXT_RE.search(message.content)
            if not match:
                return {}
            try:
                decoded = json.loads(match.group(1))
            except json.JSONDecodeError:
                return {}
            return decoded if isinstance(decoded, dict) else {}
        return {}


@dataclass(frozen=True)
class ProviderUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    usage: ProviderUsage = ProviderUsage()


class LLMProvider(Protocol):
    """Contract for anything that can answer a :class:`ProviderRequest`."""

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        """Return one completion for ``request``."""


def estimate_tokens(text: str) -> int:
    return len(text.split())


@dataclass
class ProviderBundle:
    """Routes each role to a provider; roles without an override use ``default``."""

    default: LLMProvider
    overrides: Dict[str, LLMProvider] = field(default_factory=dict)

    def for_role(self, role: str) -> LLMProvider:
        return self.overrides.get(role, self.default)

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        if not request.messages:
            raise ProviderError("malformed-output", "request has no messages")
        return self.for_role(request.role).complete(request)

    def with_override(self, role: str, provider: LLMProvider) -> "ProviderBundle":
        overrides = dict(self.overrides)
        overrides[role] = provider
        return ProviderBundle(default=self.default, overrides=overrides)


def ask(
    provider: LLMProvider,
    role: str,
    messages: Sequence[ChatMessage],
    *,
    seed: int = 0,
    temperature: float = 0.0,
    max_output_tokens: int = 2048,
) -> str:
    """Send ``messages`` under ``role`` and return the response text."""

    if not messages:
        raise ProviderError("malformed-output", "request has no messages")
    request = ProviderRequest(
        role=role,
        messages=tuple(messages),
        sampling=SamplingParams(temperature=temperature, max_output_tokens=max_output_tokens, seed=seed),
    )
    return provider.complete(request).text


def extract_json(text: str) -> Any:
    """Decode the JSON object in a completion, tolerating fenced code blocks."""

    candidates = [match.group(1) for match in _JSON_BLOCK_RE.finditer(text)]
    candidates.append(text)
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        candidates.append(text[start : end + 1])
    for candidate in candidates:
        try:
            return json.loads(candidate.strip())
        except (json.JSONDecodeError, ValueError):
            continue
    raise ProviderError("malformed-output", "response does not contain a JSON document")


def extract_decimal(text: str) -> float:
    match = re.search(r"-?\d+(?:\.\d+)?", text)
    if not match:
        raise ProviderError("malformed-output", f"expected a decimal score, got {text[:80]!r}")
    return float(match.group())


_ALLOWED_PROVIDERS = {
    "providers.mock.MockProvider",
    "providers.remote.RemoteProvider",
}


def _load_provider_from_env() -> Optional[LLMProvider]:
    provider_path = os.environ.get("ENVFORGE_PROVIDER")
    if not provider_path:
        return None
    if provider_path not in _ALLOWED_PROVIDERS:
        logger.error("ENVFORGE_PROVIDER %r is not in the allowed list", provider_path)
        return None
    try:
        module_path, _, attr_name = provider_path.rpartition(".")
        module = importlib.import_module(module_path)
        factory = getattr(module, attr_name)
        provider = factory() if callable(factory) else factory
        if not hasattr(provider, "complete"):
            raise TypeError("Provider must define a 'complete' method")
        return provider  # type: ignore[return-value]
    except Exception:
        logger.exception("[provider] Failed to load provider from environment")
        return None


def build_provider_bundle(mode: str = "mock", **options: Any) -> ProviderBundle:
    """Create the bundle for ``mode`` (``mock`` or ``remote``), honouring ``ENVFORGE_PROVIDER``."""

    env_provider = _load_provider_from_env()
    if env_provider is not None:
        return ProviderBundle(default=env_provider)
    if mode == "remote":
        from providers.remote import RemoteProvider  # Local import keeps requests optional for mock runs

        return ProviderBundle(default=RemoteProvider(**options))
    if mode != "mock":
        raise ValueError(f"Unknown provider mode '{mode}'. Expected 'mock' or 'remote'.")
    from providers.mock import MockProvider

    return ProviderBundle(default=MockProvider())


_bundle: Optional[ProviderBundle] = None


def set_provider_bundle(bundle: Optional[ProviderBundle]) -> None:
    """Override the process-wide provider bundle (``None`` resets to configuration)."""

    global _bundle
    _bundle = bundle


def get_provider_bundle() -> ProviderBundle:
    global _bundle
    if _bundle is None:
        from core.settings import load_settings

        settings = load_settings()
        _bundle = build_provider_bundle(settings.provider.mode, **settings.provider.remote_options())
    return _bundle


__all__ = [
    "CONTEXT_CLOSE",
    "CONTEXT_OPEN",
    "ChatMessage",
    "LLMProvider",
    "ProviderBundle",
    "ProviderError",
    "ProviderRequest",
    "ProviderResponse",
    "ProviderUsage",
    "ROLES",
    "SamplingParams",
    "ask",
    "build_provider_bundle",
    "estimate_tokens",
    "extract_decimal",
    "extract_json",
    "get_provider_bundle",
    "set_provider_bundle",
]
