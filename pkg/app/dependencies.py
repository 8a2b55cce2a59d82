"""Centralised imports and shared services for route handlers."""

from __future__ import annotations

import logging
from threading import Lock
from typing import Dict, Iterable, Optional

from adapters.bundle_store import load_bundles
from core.agents import user_from_payload
from core.episode import (
    ERROR,
    ActionFormatError,
    EpisodeConfig,
    EpisodeTerminated,
    UserError,
    action_from_payload,
    evaluate_episode,
    start_episode,
    step,
)
from core.provider_service import get_provider_bundle
from core.sessions import SessionNotFound, get_session_service
from core.settings import load_settings
from core.task_bundle import TaskBundle


class BundleNotFound(KeyError):
    """Raised when a request names a bundle the server did not load."""


_bundles: Optional[Dict[str, TaskBundle]] = None
_bundles_lock = Lock()


def set_bundle_registry(bundles: Optional[Dict[str, TaskBundle]]) -> None:
    """Override the served bundles (``None`` reloads from ``server.bundles_path``)."""

    global _bundles
    with _bundles_lock:
        _bundles = None if bundles is None else dict(bundles)


def get_bundle_registry() -> Dict[str, TaskBundle]:
    global _bundles
    with _bundles_lock:
        if _bundles is None:
            path = load_settings().server.bundles_path
            _bundles = load_bundles(path)
            logging.info("[episodes] Serving %s bundle(s) from %s", len(_bundles), path)
        return _bundles


def get_bundle(bundle_id: str) -> TaskBundle:
    bundle = get_bundle_registry().get(bundle_id)
    if bundle is None:
        raise BundleNotFound(bundle_id)
    return bundle


def get_episode_config() -> EpisodeConfig:
    return EpisodeConfig.from_settings(load_settings().episode)


__all__: Iterable[str] = (
    "ERROR",
    "ActionFormatError",
    "BundleNotFound",
    "EpisodeTerminated",
    "SessionNotFound",
    "UserError",
    "action_from_payload",
    "evaluate_episode",
    "get_bundle",
    "get_bundle_registry",
    "get_episode_config",
    "get_provider_bundle",
    "get_session_service",
    "set_bundle_registry",
    "start_episode",
    "step",
    "user_from_payload",
)
