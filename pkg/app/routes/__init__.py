"""Route modules registered with the shared FunctionApp."""

from . import docs, episodes  # noqa: F401

__all__ = ["docs", "episodes"]
