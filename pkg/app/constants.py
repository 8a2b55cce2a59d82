"""Shared constants for the episode API."""

API_TITLE = "envforge Episode API"
API_VERSION = "0.1.0"
STATE_MIMETYPE = "text/plain"
