"""OpenAI-compatible chat-completions client."""

from __future__ import annotations

import os
import time

import httpx

from ..errors import BackendConfigError, EmptyResponse, ProviderError, Timeout, TransportError
from .base import Backend, BackendConfig, CallParams, Completion


class HttpBackend(Backend):
    def __init__(self, config: BackendConfig, *, transport: httpx.BaseTransport | None = None):
        super().__init__(config)
        self._client = httpx.Client(timeout=config.timeout, transport=transport)

    @property
    def url(self) -> str:
        return self.config.endpoint_url.rstrip("/") + "/chat/completions"

    def _headers(self) -> dict:
        key = os.environ.get(self.config.api_key_env or "")
        if not key:
            raise BackendConfigError(f"environment variable {self.config.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def request_body(self, messages: list[dict], params: CallParams) -> dict:
        temperature = params.temperature if params.temperature is not None else self.config.temperature
        max_tokens = params.max_tokens if params.max_tokens is not None else self.config.max_tokens
        body = {"model": self.config.model_name, "messages": messages}
        if temperature is not None:
            body["temperature"] = temperature
        if max_tokens is not None:
            body["max_tokens"] = max_tokens
        return body

    def _complete(self, messages: list[dict], params: CallParams) -> Completion:
        headers = self._headers()
        start = time.perf_counter()
        try:
            resp = self._client.post(self.url, json=self.request_body(messages, params), headers=headers)
        except httpx.TimeoutException as exc:
            raise Timeout(str(exc) or "request timed out", latency=time.perf_counter() - start) from exc
        except httpx.TransportError as exc:
            raise TransportError(str(exc) or type(exc).__name__, latency=time.perf_counter() - start) from exc
        latency = time.perf_counter() - start
        if not 200 <= resp.status_code < 300:
            raise ProviderError(resp.status_code, resp.text, latency=latency)
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed response body: {resp.text[:200]}", latency=latency) from exc
        if not isinstance(content, str) or not content.strip():
            raise EmptyResponse("provider returned empty content", latency=latency)
        usage = data.get("usage") if isinstance(data.get("usage"), dict) else None
        return Completion(content, latency, usage)

    def close(self) -> None:
        self._client.close()
