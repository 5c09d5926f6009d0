"""Uniform completion interface shared by live and mock backends."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Any

from ..errors import BackendConfigError


@dataclass(frozen=True)
class BackendConfig:
    backend_id: str
    kind: str  # "live" | "mock"
    endpoint_url: str | None = None
    model_name: str | None = None
    api_key_env: str | None = None
    timeout: float = 120.0
    max_tokens: int | None = None
    temperature: float | None = None
    mock_script_path: str | None = None
    max_concurrency: int = 4

    def problems(self) -> list[str]:
        out = []
        if self.kind not in ("live", "mock"):
            out.append(f"backend {self.backend_id}: kind must be 'live' or 'mock', got {self.kind!r}")
        if self.kind == "live":
            if not self.endpoint_url:
                out.append(f"backend {self.backend_id}: live backend requires endpoint_url")
            if not self.api_key_env:
                out.append(f"backend {self.backend_id}: live backend requires api_key_env")
            if not self.model_name:
                out.append(f"backend {self.backend_id}: live backend requires model_name")
        if self.kind == "mock" and not self.mock_script_path:
            out.append(f"backend {self.backend_id}: mock backend requires mock_script_path")
        if not self.timeout > 0:
            out.append(f"backend {self.backend_id}: timeout must be > 0")
        if self.max_concurrency < 1:
            out.append(f"backend {self.backend_id}: max_concurrency must be >= 1")
        return out


@dataclass(frozen=True)
class CallParams:
    """Sampling parameters plus the request context mocks match on."""

    temperature: float | None = None
    max_tokens: int | None = None
    phase: int | None = None
    role: str | None = None
    model_id: str | None = None
    run_index: int | None = None
    round_index: int | None = None
    attempt: int = 1
    extra: dict[str, Any] = field(default_factory=dict)

    def with_attempt(self, attempt: int) -> "CallParams":
        return replace(self, attempt=attempt)

    def sampling(self) -> dict:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens}


@dataclass(frozen=True)
class Completion:
    text: str
    latency: float
    token_usage: dict | None = None


class Backend:
    """Base class.  Subclasses implement ``_complete``; the cap on in-flight calls lives here."""

    def __init__(self, config: BackendConfig):
        problems = config.problems()
        if problems:
            raise BackendConfigError("; ".join(problems))
        self.config = config
        self._slots = threading.BoundedSemaphore(config.max_concurrency)

    @property
    def backend_id(self) -> str:
        return self.config.backend_id

    def complete(self, messages: list[dict], params: CallParams) -> Completion:
        with self._slots:
            return self._complete(messages, params)

    def _complete(self, messages: list[dict], params: CallParams) -> Completion:  # pragma: no cover
        raise NotImplementedError

    def probe(self) -> None:
        """Raise a BackendError if the backend cannot serve a minimal request."""
        self.complete([{"role": "user", "content": "ping"}], CallParams(max_tokens=1, role="probe"))

    def close(self) -> None:
        pass


def to_messages(prompt: str, system: str = "") -> list[dict]:
    msgs = [{"role": "system", "content": system}] if system else []
    msgs.append({"role": "user", "content": prompt})
    return msgs


def complete(backend: Backend, prompt: str | list[dict], params: CallParams | None = None) -> Completion:
    messages = to_messages(prompt) if isinstance(prompt, str) else prompt
    return backend.complete(messages, params or CallParams())
