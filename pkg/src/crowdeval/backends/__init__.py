"""Completion backends: live HTTP chat endpoints and scripted mocks."""

from __future__ import annotations

from .base import Backend, BackendConfig, CallParams, Completion, complete, to_messages
from .http import HttpBackend
from .mock import BUILTIN_SCRIPT, MockBackend, load_script
from .retry import CallOutcome, RetryPolicy, complete_with_retries


def make_backend(config: BackendConfig) -> Backend:
    if config.kind == "mock":
        return MockBackend(config)
    return HttpBackend(config)


__all__ = [
    "BUILTIN_SCRIPT",
    "Backend",
    "BackendConfig",
    "CallOutcome",
    "CallParams",
    "Completion",
    "HttpBackend",
    "MockBackend",
    "RetryPolicy",
    "complete",
    "complete_with_retries",
    "load_script",
    "make_backend",
    "to_messages",
]
