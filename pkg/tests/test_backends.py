import json
import random
import threading
import time

import httpx
import pytest
from hypothesis import given, strategies as st

from crowdeval.backends import (
    BackendConfig,
    CallParams,
    HttpBackend,
    MockBackend,
    RetryPolicy,
    complete,
    complete_with_retries,
    make_backend,
)
from crowdeval.errors import (
    BackendConfigError,
    EmptyResponse,
    ExhaustedRetries,
    ProviderError,
    Timeout,
    TransportError,
)
from crowdeval.records import ValidationErrors


def mock(script, **kw):
    cfg = BackendConfig("m", "mock", mock_script_path="builtin", **kw)
    return MockBackend(cfg, script)


def live(handler, monkeypatch, **kw):
    monkeypatch.setenv("TEST_KEY", "sk-test")
    cfg = BackendConfig("live1", "live", endpoint_url="https://example.test/v1", model_name="gpt-x",
                        api_key_env="TEST_KEY", **kw)
    return HttpBackend(cfg, transport=httpx.MockTransport(handler))


def test_mock_literal_response():
    b = mock({"default": {"response": "PONG"}})
    c = complete(b, "ping")
    assert c.text == "PONG" and c.latency >= 0


def test_mock_rules_match_in_order():
    b = mock({"rules": [{"match": {"model": "M2", "attempt": [1, 2]}, "error": "timeout"},
                        {"match": {"model": "M2"}, "response": "ok"}]})
    with pytest.raises(Timeout):
        complete(b, "x", CallParams(model_id="M2", attempt=2))
    assert complete(b, "x", CallParams(model_id="M2", attempt=3)).text == "ok"


def test_mock_scripted_errors():
    for err, cls in [("transport", TransportError), ("empty", EmptyResponse), (503, ProviderError)]:
        with pytest.raises(cls):
            complete(mock({"default": {"error": err}}), "x")


def test_mock_fail_rate_is_reproducible():
    script = {"seed": 3, "rules": [{"match": {}, "fail_rate": 0.5, "error": "timeout"}],
              "default": {"response": "ok"}}

    def outcomes():
        b = mock(script)
        out = []
        for i in range(40):
            try:
                complete(b, f"p{i}", CallParams(model_id="M1"))
                out.append(True)
            except Timeout:
                out.append(False)
        return out

    first = outcomes()
    assert first == outcomes()
    assert 5 < first.count(False) < 35


def test_make_backend_validates():
    with pytest.raises(BackendConfigError):
        make_backend(BackendConfig("x", "live"))
    assert isinstance(make_backend(BackendConfig("m", "mock", mock_script_path="builtin")), MockBackend)


def test_concurrency_cap():
    in_flight = []
    peak = [0]
    lock = threading.Lock()

    class Slow(MockBackend):
        def _complete(self, messages, params):
            with lock:
                in_flight.append(1)
                peak[0] = max(peak[0], len(in_flight))
            time.sleep(0.02)
            with lock:
                in_flight.pop()
            return super()._complete(messages, params)

    b = Slow(BackendConfig("m", "mock", mock_script_path="builtin", max_concurrency=2), {"default": {"response": "x"}})
    threads = [threading.Thread(target=complete, args=(b, "p")) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] <= 2


# -- HTTP ---------------------------------------------------------------------------

def ok_body(text="hello", usage=None):
    body = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if usage:
        body["usage"] = usage
    return body


def test_http_wire_format(monkeypatch):
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=ok_body("hi", {"prompt_tokens": 3, "completion_tokens": 1}))

    b = live(handler, monkeypatch)
    c = complete(b, "ping", CallParams(temperature=0.2, max_tokens=16))
    assert seen["url"] == "https://example.test/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"] == {"model": "gpt-x", "messages": [{"role": "user", "content": "ping"}],
                            "temperature": 0.2, "max_tokens": 16}
    assert c.text == "hi" and c.token_usage == {"prompt_tokens": 3, "completion_tokens": 1}


def test_http_429_is_retryable(monkeypatch):
    b = live(lambda r: httpx.Response(429, text="slow down"), monkeypatch)
    with pytest.raises(ProviderError) as exc:
        complete(b, "x")
    assert exc.value.status == 429 and exc.value.retryable


def test_http_empty_content(monkeypatch):
    b = live(lambda r: httpx.Response(200, json=ok_body("")), monkeypatch)
    with pytest.raises(EmptyResponse) as exc:
        complete(b, "x")
    assert exc.value.retryable


def test_http_401_fatal_and_not_retried(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, text="bad key")

    b = live(handler, monkeypatch)
    events = []
    with pytest.raises(ProviderError) as exc:
        complete_with_retries(b, "x", CallParams(), on_event=lambda k, p: events.append((k, p)), sleep=lambda s: None)
    assert not exc.value.retryable
    assert len(calls) == 1
    assert [k for k, _ in events] == ["prompt_sent", "attempt_failed"]


def test_http_timeout(monkeypatch):
    def handler(request):
        raise httpx.ReadTimeout("read timed out", request=request)

    with pytest.raises(Timeout):
        complete(live(handler, monkeypatch), "x")


def test_http_connect_error(monkeypatch):
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    with pytest.raises(TransportError):
        complete(live(handler, monkeypatch), "x")


def test_http_missing_key(monkeypatch):
    b = live(lambda r: httpx.Response(200, json=ok_body()), monkeypatch)
    monkeypatch.delenv("TEST_KEY")
    with pytest.raises(BackendConfigError):
        complete(b, "x")


# -- retry ----------------------------------------------------------------------------

def test_retry_fails_twice_then_succeeds():
    b = mock({"rules": [{"match": {"attempt": [1, 2]}, "error": "timeout"}], "default": {"response": "fine"}})
    events, sleeps = [], []
    out = complete_with_retries(b, "x", CallParams(), on_event=lambda k, p: events.append((k, p)),
                                rng=random.Random(1), sleep=sleeps.append)
    assert out.attempts == 3 and out.result == "fine"
    kinds = [k for k, _ in events]
    assert kinds == ["prompt_sent", "attempt_failed", "prompt_sent", "attempt_failed",
                     "prompt_sent", "response_received"]
    assert [p["attempt"] for k, p in events if k == "prompt_sent"] == [1, 2, 3]
    assert len(sleeps) == 2 and 0 <= sleeps[0] <= 2 and 0 <= sleeps[1] <= 4


def test_retry_exhausted():
    b = mock({"default": {"error": "timeout"}})
    events = []
    with pytest.raises(ExhaustedRetries) as exc:
        complete_with_retries(b, "x", CallParams(), on_event=lambda k, p: events.append(k), sleep=lambda s: None)
    assert exc.value.attempts == 3
    assert isinstance(exc.value.last_error, Timeout)
    assert events.count("attempt_failed") == 3


def test_validation_failure_shares_budget_and_reprompts():
    b = mock({"rules": [{"match": {"attempt": 1}, "error": "empty"},
                        {"match": {"attempt": 2}, "response": "bad"}],
              "default": {"generator": "echo"}})
    events = []
    out = complete_with_retries(
        b, "ORIG", CallParams(),
        on_event=lambda k, p: events.append((k, p)),
        validate=lambda t: "ok" if "FIX" in t else ValidationErrors(("missing: x",)),
        reprompt=lambda errs: "ORIG\nFIX " + ", ".join(errs),
        sleep=lambda s: None,
    )
    assert out.attempts == 3 and out.result == "ok"
    assert [k for k, _ in events].count("validation_failed") == 1
    assert events[-2][1]["messages"][-1]["content"] == "ORIG\nFIX missing: x"


def test_validation_exhausted():
    b = mock({"default": {"response": "nope"}})
    with pytest.raises(ExhaustedRetries) as exc:
        complete_with_retries(b, "x", CallParams(), validate=lambda t: ValidationErrors(("bad",)),
                              sleep=lambda s: None)
    assert isinstance(exc.value.last_error, ValidationErrors)


@given(st.integers(1, 20), st.integers(0, 2**32))
def test_backoff_within_full_jitter_bounds(attempt, seed):
    policy = RetryPolicy()
    d = policy.backoff(attempt, random.Random(seed))
    assert 0 <= d <= min(60.0, 2.0 * 2 ** (attempt - 1))
