"""Chat-completion provider backed by an HTTP endpoint (``ENVFORGE_LLM_URL``)."""

from __future__ import annotations

import logging
import os
import threading
import time
from typing import Any, Callable, Dict, Optional

import requests

from core.provider_service import ProviderError, ProviderRequest, ProviderResponse, ProviderUsage

logger = logging.getLogger(__name__)


class RemoteProvider:
    """Posts requests to an OpenAI-style ``/chat/completions`` endpoint.

    Transport errors, 5xx answers and malformed bodies are retried with
    exponential backoff. At most ``max_in_flight`` requests run concurrently.
    """

    def __init__(
        self,
        url: Optional[str] = None,
        api_key: Optional[str] = None,
        model: str = "envforge-default",
        *,
        max_in_flight: int = 8,
        retries: int = 3,
        backoff_seconds: float = 0.5,
        timeout_seconds: float = 60.0,
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.url = url or os.environ.get("ENVFORGE_LLM_URL")
        if not self.url:
            raise ValueError("RemoteProvider needs an endpoint URL (set ENVFORGE_LLM_URL).")
        self.api_key = api_key if api_key is not None else os.environ.get("ENVFORGE_LLM_KEY")
        self.model = model
        self.retries = max(1, retries)
        self.backoff_seconds = backoff_seconds
        self.timeout_seconds = timeout_seconds
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._sleep = sleep

    def _body(self, request: ProviderRequest) -> Dict[str, Any]:
        return {
            "model": self.model,
            "messages": [message.to_dict() for message in request.messages],
            "temperature": request.sampling.temperature,
            "max_tokens": request.sampling.max_output_tokens,
            "seed": request.sampling.seed,
        }

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    @staticmethod
    def _parse(payload: Any) -> ProviderResponse:
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("malformed-output", "response has no choices[0].message.content") from exc
        if not isinstance(text, str):
            raise ProviderError("malformed-output", "completion content is not text")
        usage = payload.get("usage") or {}
        return ProviderResponse(
            text=text,
            usage=ProviderUsage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
        )

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        if not request.messages:
            raise ProviderError("malformed-output", "request has no messages")
        last_error: Optional[ProviderError] = None
        for attempt in range(self.retries):
            if attempt:
                self._sleep(self.backoff_seconds * (2 ** (attempt - 1)))
            try:
                with self._slots:
                    response = self._session.post(
                        self.url,
                        json=self._body(request),
                        headers=self._headers(),
                        timeout=self.timeout_seconds,
                    )
                if response.status_code >= 500:
                    raise ProviderError("transport", f"endpoint answered HTTP {response.status_code}")
                response.raise_for_status()
                return self._parse(response.json())
            except ProviderError as exc:
                last_error = exc
            except ValueError as exc:
                last_error = ProviderError("malformed-output", f"response body is not JSON: {exc}")
            except requests.RequestException as exc:
                last_error = ProviderError("transport", str(exc))
            logger.warning(
                "[provider] %s attempt %s/%s failed: %s", request.role, attempt + 1, self.retries, last_error
            )
        assert last_error is not None
        raise last_error


__all__ = ["RemoteProvider"]
