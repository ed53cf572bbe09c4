"""Gateway record/replay, retries and throttling, all without sockets."""

from __future__ import annotations

import json

import pytest

from planloop.errors import AuthError, CassetteMiss, SchemaError, TransportError
from planloop.gateway import (
    API_KEY_VAR,
    RETRY_SLEEPS,
    Cassette,
    ChatRequest,
    LlmGateway,
    request_digest,
)


def req(text="hello", model="test-model"):
    return ChatRequest(model_id=model, messages=(("user", text),))


def ok_body(content):
    return json.dumps({"choices": [{"message": {"content": content}}]})


class ScriptedTransport:
    """Feeds a fixed sequence of (status, body) pairs and logs each call."""

    def __init__(self, steps):
        self.steps = list(steps)
        self.calls = []

    def __call__(self, url, headers, payload):
        self.calls.append((url, headers, payload))
        step = self.steps.pop(0)
        if isinstance(step, Exception):
            raise step
        return step


def test_request_digest_is_stable_and_content_sensitive():
    assert request_digest(req("a")) == request_digest(req("a"))
    assert request_digest(req("a")) != request_digest(req("b"))
    assert request_digest(req("a")) != request_digest(req("a", model="other"))
    hot = ChatRequest(model_id="test-model", messages=(("user", "a"),), temperature=0.7)
    assert request_digest(hot) != request_digest(req("a"))


def test_replay_serves_the_cassette_and_never_calls_out():
    request = req("what happened?")
    cassette = Cassette()
    cassette.put(request_digest(request), request, "nothing moved")

    def exploding_transport(url, headers, payload):
        raise AssertionError("replay mode must not touch the network")

    gateway = LlmGateway(mode="replay", cassette=cassette, transport=exploding_transport)
    assert gateway.complete(request) == "nothing moved"


def test_replay_miss_names_the_digest_and_prompt_head():
    gateway = LlmGateway(mode="replay", cassette=Cassette(), transport=lambda *a: (_ for _ in ()).throw(AssertionError))
    request = req("a very specific prompt that was never recorded")
    with pytest.raises(CassetteMiss, match=request_digest(request)[:12]):
        gateway.complete(request)
    with pytest.raises(CassetteMiss, match="a very specific prompt"):
        gateway.complete(request)


def test_record_mode_saves_every_response(tmp_path, monkeypatch):
    monkeypatch.setenv(API_KEY_VAR, "k-test")
    path = tmp_path / "cassette.json"
    transport = ScriptedTransport([(200, ok_body("first")), (200, ok_body("second"))])
    gateway = LlmGateway(
        mode="record",
        cassette=Cassette(),
        cassette_path=str(path),
        transport=transport,
        sleeper=lambda s: None,
        clock=iter(range(1000)).__next__,
    )
    assert gateway.complete(req("one")) == "first"
    assert gateway.complete(req("two")) == "second"
    saved = Cassette.load(path)
    assert saved.get(request_digest(req("one"))) == "first"
    assert saved.get(request_digest(req("two"))) == "second"
    # the recorded cassette replays with no transport at all
    replayer = LlmGateway(mode="replay", cassette=saved)
    assert replayer.complete(req("one")) == "first"


def test_live_mode_requires_an_api_key(monkeypatch):
    monkeypatch.delenv(API_KEY_VAR, raising=False)
    gateway = LlmGateway(mode="live", transport=ScriptedTransport([(200, ok_body("x"))]))
    with pytest.raises(AuthError, match=API_KEY_VAR):
        gateway.complete(req())


def test_rejected_key_is_not_retried(monkeypatch):
    monkeypatch.setenv(API_KEY_VAR, "k-bad")
    transport = ScriptedTransport([(401, "unauthorized")])
    gateway = LlmGateway(mode="live", transport=transport, sleeper=lambda s: None, clock=iter(range(1000)).__next__)
    with pytest.raises(AuthError, match="rejected"):
        gateway.complete(req())
    assert len(transport.calls) == 1


def test_transient_errors_back_off_then_succeed(monkeypatch):
    monkeypatch.setenv(API_KEY_VAR, "k-test")
    sleeps = []
    transport = ScriptedTransport([(500, "boom"), (429, "slow down"), (200, ok_body("done"))])
    gateway = LlmGateway(
        mode="live",
        transport=transport,
        sleeper=sleeps.append,
        clock=iter(range(0, 10000, 100)).__next__,
    )
    assert gateway.complete(req()) == "done"
    assert len(transport.calls) == 3
    # backoff pauses follow the fixed schedule
    assert [s for s in sleeps if s in RETRY_SLEEPS] == [RETRY_SLEEPS[0], RETRY_SLEEPS[1]]


def test_persistent_errors_give_up_after_the_schedule(monkeypatch):
    monkeypatch.setenv(API_KEY_VAR, "k-test")
    transport = ScriptedTransport([(503, "down")] * (1 + len(RETRY_SLEEPS)))
    gateway = LlmGateway(
        mode="live",
        transport=transport,
        sleeper=lambda s: None,
        clock=iter(range(0, 10000, 100)).__next__,
    )
    with pytest.raises(TransportError, match="gave up"):
        gateway.complete(req())
    assert len(transport.calls) == 1 + len(RETRY_SLEEPS)


def test_hard_http_errors_fail_immediately(monkeypatch):
    monkeypatch.setenv(API_KEY_VAR, "k-test")
    transport = ScriptedTransport([(400, "bad request body")])
    gateway = LlmGateway(mode="live", transport=transport, sleeper=lambda s: None, clock=iter(range(1000)).__next__)
    with pytest.raises(TransportError, match="400"):
        gateway.complete(req())
    assert len(transport.calls) == 1


def test_malformed_completion_payloads_are_transport_errors(monkeypatch):
    monkeypatch.setenv(API_KEY_VAR, "k-test")
    transport = ScriptedTransport([(200, '{"choices": []}')])
    gateway = LlmGateway(mode="live", transport=transport, sleeper=lambda s: None, clock=iter(range(1000)).__next__)
    with pytest.raises(TransportError, match="malformed"):
        gateway.complete(req())


def test_back_to_back_calls_are_throttled(monkeypatch):
    monkeypatch.setenv(API_KEY_VAR, "k-test")
    sleeps = []
    # clock barely advances, so the second call must wait out the interval
    clock_values = iter([0.0, 0.0, 0.01, 0.01, 0.02, 0.02])
    transport = ScriptedTransport([(200, ok_body("a")), (200, ok_body("b"))])
    gateway = LlmGateway(
        mode="live",
        transport=transport,
        sleeper=sleeps.append,
        clock=clock_values.__next__,
    )
    gateway.complete(req("first"))
    gateway.complete(req("second"))
    assert any(0 < s <= 0.5 for s in sleeps)


def test_gateway_rejects_unknown_modes():
    with pytest.raises(ValueError):
        LlmGateway(mode="stream")


def test_cassette_load_validates_shape(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"format": 2, "entries": {}}', encoding="utf-8")
    with pytest.raises(SchemaError, match="format"):
        Cassette.load(path)
    path.write_text('{"format": 1}', encoding="utf-8")
    with pytest.raises(SchemaError, match="entries"):
        Cassette.load(path)
    path.write_text('{"format": 1, "entries": {"abc": {}}}', encoding="utf-8")
    with pytest.raises(SchemaError, match="no response"):
        Cassette.load(path)
    with pytest.raises(SchemaError, match="unreadable"):
        Cassette.load(tmp_path / "missing.json")
