"""Shared error helpers for HTTP routes."""

from __future__ import annotations

import logging

import azure.functions as func

from .dependencies import ActionFormatError, BundleNotFound, EpisodeTerminated, SessionNotFound
from .responses import json_message


def handle_episode_error(exc: Exception, *, log_prefix: str) -> func.HttpResponse:
    if isinstance(exc, (SessionNotFound, BundleNotFound)):
        return json_message(f"Not found: {exc.args[0] if exc.args else exc}.", status_code=404)
    if isinstance(exc, EpisodeTerminated):
        return json_message(str(exc), status_code=409)
    if isinstance(exc, (ActionFormatError, ValueError)):
        return json_message(str(exc), status_code=400)

    logging.exception("[%s] Unexpected error", log_prefix)
    return json_message("Episode request failed.", status_code=500)
