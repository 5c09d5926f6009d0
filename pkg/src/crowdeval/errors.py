"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CrowdEvalError(Exception):
    """Base class for all package errors."""


class ConfigInvalid(CrowdEvalError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ConfigMismatch(CrowdEvalError):
    """The supplied config does not match the digest recorded in a log."""


class TemplateVarMissing(CrowdEvalError):
    def __init__(self, names):
        self.names = sorted(names)
        super().__init__(f"template references undefined placeholder(s): {', '.join(self.names)}")


class DomainNotFound(CrowdEvalError):
    pass


class DuplicateLabel(CrowdEvalError):
    pass


class InsufficientData(CrowdEvalError):
    pass


# -- backend errors ---------------------------------------------------------

class BackendError(CrowdEvalError):
    """A single completion attempt failed."""

    retryable = False
    kind = "backend_error"

    def __init__(self, message: str = "", *, latency: float = 0.0):
        super().__init__(message)
        self.latency = latency

    def describe(self) -> dict:
        return {"error": self.kind, "retryable": self.retryable, "detail": str(self)}


class Timeout(BackendError):
    retryable = True
    kind = "timeout"


class TransportError(BackendError):
    retryable = True
    kind = "transport"


class EmptyResponse(BackendError):
    retryable = True
    kind = "empty_response"


class ProviderError(BackendError):
    kind = "provider"

    def __init__(self, status: int, body: str = "", *, latency: float = 0.0):
        super().__init__(f"HTTP {status}: {body[:500]}", latency=latency)
        self.status = status
        self.body = body
        self.retryable = status in (408, 429) or 500 <= status <= 599

    def describe(self) -> dict:
        d = super().describe()
        d["status"] = self.status
        return d


class BackendConfigError(BackendError):
    kind = "config"


class ExhaustedRetries(CrowdEvalError):
    def __init__(self, last_error, attempts: int):
        self.last_error = last_error
        self.attempts = attempts
        super().__init__(f"gave up after {attempts} attempt(s): {last_error}")


class BackendUnreachable(CrowdEvalError):
    pass


# -- protocol errors --------------------------------------------------------

class CallFailed(CrowdEvalError):
    """A model call exhausted its budget or hit a fatal error."""

    def __init__(self, reason: str, attempts: int, last_error: dict | None = None):
        self.reason = reason
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"{reason} after {attempts} attempt(s)")


class QuestionGenerationFailed(CallFailed):
    pass


class AnswerFailed(CallFailed):
    pass


class EvaluationFailed(CallFailed):
    pass


class RunAborted(CrowdEvalError):
    pass


class RoundPersistFailed(RunAborted):
    pass


# -- persistence errors -----------------------------------------------------

class CorruptLog(CrowdEvalError):
    pass


class IntegrityError(CrowdEvalError):
    pass
