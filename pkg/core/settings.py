"""Engine configuration loaded from ``envforge.toml`` with environment overrides."""

from __future__ import annotations

import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

logger = logging.getLogger(__name__)

CONFIG_ENV = "ENVFORGE_CONFIG"
DEFAULT_CONFIG_PATH = Path(__file__).resolve().parents[1] / "envforge.toml"


class ProviderSettings(BaseModel):
    model_config = ConfigDict(extra="ignore")

    mode: Literal["mock", "remote"] = "mock"
    url: Optional[str] = Field(default=None, description="Chat-completion endpoint (ENVFORGE_LLM_URL).")
    api_key: Optional[str] = Field(default=None, description="Bearer credential (ENVFORGE_LLM_KEY).")
    model: str = "envforge-default"
    temperature: float = 0.0
    max_output_tokens: int = 2048
    max_in_flight: int = Field(default=8, ge=1)
    retries: int = Field(default=3, ge=1)
    backoff_seconds: float = Field(default=0.5, ge=0.0)
    timeout_seconds: float = Field(default=60.0, gt=0.0)

    def remote_options(self) -> Dict[str, Any]:
        if self.mode != "remote":
            return {}
        return {
            "url": self.url,
            "api_key": self.api_key,
            "model": self.model,
            "max_in_flight": self.max_in_flight,
            "retries": self.retries,
            "backoff_seconds": self.backoff_seconds,
            "timeout_seconds": self.timeout_seconds,
        }


class ForgeSettings(BaseModel):
    model_config = ConfigDict(extra="ignore")

    tau: float = Field(default=0.5, ge=0.0, le=1.0)
    oracle_k: int = Field(default=16, ge=1)
    min_toolset: int = Field(default=20, ge=0)
    expansion_budget: Dict[str, int] = Field(default_factory=lambda: {"1": 6, "2": 10, "3": 14})
    max_iterations: int = Field(default=8, ge=0)
    auxiliary_attempts: int = Field(default=10, ge=0)
    chain_attempts: int = Field(default=5, ge=1)
    max_repairs: int = Field(default=5, ge=0)
    instruction_retries: int = Field(default=3, ge=1)
    distractor_attempts: int = Field(default=100, ge=1)
    clock_start: str = "2024-03-15 09:30:00"
    clock_step_seconds: int = Field(default=60, ge=1)

    def budget_for(self, level: int) -> int:
        return int(self.expansion_budget.get(str(level), max(self.expansion_budget.values(), default=10)))


class EpisodeSettings(BaseModel):
    model_config = ConfigDict(extra="ignore")

    max_turns: int = Field(default=40, ge=1)
    max_actions: int = Field(default=400, ge=1)
    group_workers: int = Field(default=4, ge=1)


class ServerSettings(BaseModel):
    model_config = ConfigDict(extra="ignore")

    port: int = 7071
    session_ttl_seconds: int = Field(default=3600, ge=1)
    bundles_path: str = "bundles"


class EngineSettings(BaseModel):
    model_config = ConfigDict(extra="ignore")

    provider: ProviderSettings = Field(default_factory=ProviderSettings)
    forge: ForgeSettings = Field(default_factory=ForgeSettings)
    episode: EpisodeSettings = Field(default_factory=EpisodeSettings)
    server: ServerSettings = Field(default_factory=ServerSettings)


_ENV_OVERRIDES = {
    "ENVFORGE_LLM_URL": ("provider", "url"),
    "ENVFORGE_LLM_KEY": ("provider", "api_key"),
    "ENVFORGE_LLM_MODEL": ("provider", "model"),
    "ENVFORGE_PROVIDER_MODE": ("provider", "mode"),
    "ENVFORGE_BUNDLES_PATH": ("server", "bundles_path"),
    "ENVFORGE_SESSION_TTL": ("server", "session_ttl_seconds"),
    "ENVFORGE_PORT": ("server", "port"),
}


def _read_document(path: Path) -> Dict[str, Any]:
    if not path.exists():
        return {}
    with path.open("rb") as handle:
        return tomllib.load(handle)


def load_settings(path: Optional[str | Path] = None, *, environ: Optional[Dict[str, str]] = None) -> EngineSettings:
    """Read settings from ``path`` (or ``ENVFORGE_CONFIG`` / the repo default) and apply env overrides."""

    environ = dict(os.environ if environ is None else environ)
    config_path = Path(path or environ.get(CONFIG_ENV) or DEFAULT_CONFIG_PATH)
    document = _read_document(config_path)

    for variable, (section, key) in _ENV_OVERRIDES.items():
        value = environ.get(variable)
        if value:
            document.setdefault(section, {})[key] = value
    if environ.get("ENVFORGE_LLM_URL") and "mode" not in document.get("provider", {}):
        document.setdefault("provider", {})["mode"] = "remote"

    try:
        return EngineSettings.model_validate(document)
    except ValidationError as exc:
        logger.error("[settings] Invalid configuration in %s: %s", config_path, exc)
        raise ValueError(f"Invalid envforge configuration in '{config_path}': {exc}") from exc


__all__ = [
    "EngineSettings",
    "EpisodeSettings",
    "ForgeSettings",
    "ProviderSettings",
    "ServerSettings",
    "load_settings",
]
