"""Retry loop shared by transport failures and output-validation failures."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass
from typing import Any, Callable

from ..errors import BackendError, ExhaustedRetries
from ..records import ValidationErrors
from .base import Backend, CallParams, Completion, to_messages

EventSink = Callable[[str, dict], None]


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 2.0
    backoff_cap: float = 60.0

    def backoff(self, attempt: int, rng: random.Random) -> float:
        """Full-jitter delay before attempt ``attempt + 1``."""
        return rng.uniform(0.0, min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1)))


@dataclass
class CallOutcome:
    completion: Completion
    result: Any
    attempts: int


def complete_with_retries(
    backend: Backend,
    prompt: str,
    params: CallParams,
    policy: RetryPolicy = RetryPolicy(),
    *,
    system: str = "",
    on_event: EventSink | None = None,
    validate: Callable[[str], Any] | None = None,
    reprompt: Callable[[ValidationErrors], str] | None = None,
    rng: random.Random | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> CallOutcome:
    """Call ``backend`` until it yields a response that passes ``validate``.

    Transport and validation failures draw on the same ``policy.max_attempts`` budget.
    Validation failures re-prompt immediately (via ``reprompt``); retryable transport
    failures back off first.  A fatal error is re-raised after its event is emitted.
    """
    emit = on_event or (lambda kind, payload: None)
    rng = rng or random.Random()
    current = prompt
    last_error: BackendError | ValidationErrors | None = None
    for attempt in range(1, policy.max_attempts + 1):
        messages = to_messages(current, system)
        emit("prompt_sent", {"attempt": attempt, "messages": messages, "params": params.sampling()})
        try:
            completion = backend.complete(messages, params.with_attempt(attempt))
        except BackendError as exc:
            last_error = exc
            final = not exc.retryable or attempt == policy.max_attempts
            delay = 0.0 if final else policy.backoff(attempt, rng)
            emit("attempt_failed", {"attempt": attempt, **exc.describe(), "latency": exc.latency, "backoff_s": delay})
            if not exc.retryable:
                raise
            if delay:
                sleep(delay)
            continue
        emit("response_received", {"attempt": attempt, "text": completion.text,
                                    "latency": completion.latency, "token_usage": completion.token_usage})
        if validate is None:
            return CallOutcome(completion, completion.text, attempt)
        result = validate(completion.text)
        if not isinstance(result, ValidationErrors):
            return CallOutcome(completion, result, attempt)
        last_error = result
        emit("validation_failed", {"attempt": attempt, "errors": list(result.errors)})
        if reprompt is not None:
            current = reprompt(result)
    raise ExhaustedRetries(last_error, policy.max_attempts)
