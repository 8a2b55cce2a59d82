"""Application package exposing the shared FunctionApp instance.

The episode API is consumed by trainer processes on a private network, so the
FunctionApp uses anonymous authentication.
"""

from __future__ import annotations

import azure.functions as func

app = func.FunctionApp(http_auth_level=func.AuthLevel.ANONYMOUS)

# Import route modules so decorators execute at import time
from .routes import docs as _docs_routes  # noqa: F401
from .routes import episodes as _episode_routes  # noqa: F401

__all__ = ["app"]
