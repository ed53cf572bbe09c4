"""Chat-model access with cassette record/replay.

Every request is digested from its canonical JSON form; a cassette maps
digests to response texts. Replay mode never opens a socket, so committed
cassettes make batch runs reproducible on machines with no credentials.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AuthError, CassetteMiss, SchemaError, TransportError

__all__ = [
    "API_KEY_VAR",
    "BASE_URL_VAR",
    "CASSETTE_FORMAT",
    "RETRY_SLEEPS",
    "ChatRequest",
    "request_digest",
    "Cassette",
    "LlmGateway",
    "http_transport",
]

API_KEY_VAR = "PLANLOOP_API_KEY"
BASE_URL_VAR = "PLANLOOP_BASE_URL"
CASSETTE_FORMAT = 1
RETRY_SLEEPS = (1.0, 4.0, 16.0)
MIN_CALL_INTERVAL = 0.5


@dataclass(frozen=True)
class ChatRequest:
    """One chat completion request, canonicalized for digesting."""

    model_id: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 1024

    def canonical(self) -> str:
        body = {
            "model": self.model_id,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":"))


def request_digest(request: ChatRequest) -> str:
    return hashlib.sha256(request.canonical().encode("utf-8")).hexdigest()


class Cassette:
    """Digest-keyed store of recorded responses."""

    def __init__(self, entries: dict[str, dict] | None = None) -> None:
        self.entries = entries if entries is not None else {}

    @classmethod
    def load(cls, path: str | Path) -> "Cassette":
        path = Path(path)
        try:
            body = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"unreadable cassette: {exc}", path=str(path)) from exc
        if not isinstance(body, dict) or body.get("format") != CASSETTE_FORMAT:
            raise SchemaError(
                f"cassette format must be {CASSETTE_FORMAT}", path=str(path)
            )
        entries = body.get("entries")
        if not isinstance(entries, dict):
            raise SchemaError("cassette is missing its entries table", path=str(path))
        for digest, entry in entries.items():
            if not isinstance(entry, dict) or "response" not in entry:
                raise SchemaError(
                    f"cassette entry {digest[:12]} has no response", path=str(path)
                )
        return cls(entries)

    def save(self, path: str | Path) -> None:
        body = {"format": CASSETTE_FORMAT, "entries": self.entries}
        Path(path).write_text(
            json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def get(self, digest: str) -> str | None:
        entry = self.entries.get(digest)
        return None if entry is None else entry["response"]

    def put(self, digest: str, request: ChatRequest, response: str) -> None:
        self.entries[digest] = {
            "request": json.loads(request.canonical()),
            "response": response,
        }


def http_transport(url: str, headers: dict[str, str], payload: dict) -> tuple[int, str]:
    """Default transport; split out so tests can run without sockets."""
    import requests

    try:
        reply = requests.post(url, headers=headers, json=payload, timeout=60)
    except requests.RequestException as exc:
        raise TransportError(str(exc)) from exc
    return reply.status_code, reply.text


@dataclass
class LlmGateway:
    """Routes requests to the cassette, the network, or both.

    Modes: ``replay`` answers from the cassette only and raises CassetteMiss
    otherwise; ``record`` calls the network and stores every response;
    ``live`` calls the network and stores nothing.
    """

    mode: str = "replay"
    cassette: Cassette = field(default_factory=Cassette)
    cassette_path: str | None = None
    transport: object = None
    sleeper: object = time.sleep
    clock: object = time.monotonic
    _last_call: float = field(default=float("-inf"), repr=False)

    def __post_init__(self) -> None:
        if self.mode not in ("replay", "record", "live"):
            raise ValueError(f"unknown gateway mode {self.mode!r}")
        if self.transport is None:
            self.transport = http_transport

    def complete(self, request: ChatRequest) -> str:
        digest = request_digest(request)
        if self.mode == "replay":
            response = self.cassette.get(digest)
            if response is None:
                head = request.messages[-1][1][:60] if request.messages else ""
                raise CassetteMiss(
                    f"no recorded response for digest {digest[:12]} (prompt head {head!r})"
                )
            return response
        response = self._call_live(request)
        if self.mode == "record":
            self.cassette.put(digest, request, response)
            if self.cassette_path is not None:
                self.cassette.save(self.cassette_path)
        return response

    def _call_live(self, request: ChatRequest) -> str:
        api_key = os.environ.get(API_KEY_VAR)
        if not api_key:
            raise AuthError(f"{API_KEY_VAR} is not set; cannot reach a live backend")
        base_url = os.environ.get(BASE_URL_VAR, "https://api.openai.com").rstrip("/")
        url = f"{base_url}/v1/chat/completions"
        headers = {
            "Authorization": f"Bearer {api_key}",
            "Content-Type": "application/json",
        }
        payload = json.loads(request.canonical())
        last_error: Exception | None = None
        for attempt, pause in enumerate((0.0,) + RETRY_SLEEPS):
            if pause:
                self.sleeper(pause)
            self._throttle()
            try:
                status, text = self.transport(url, headers, payload)
            except TransportError as exc:
                last_error = exc
                continue
            if status == 401:
                raise AuthError("backend rejected the API key")
            if status >= 500 or status == 429:
                last_error = TransportError(f"backend returned {status}")
                continue
            if status != 200:
                raise TransportError(f"backend returned {status}: {text[:200]}")
            return self._parse_reply(text)
        raise TransportError(f"gave up after retries: {last_error}")

    def _throttle(self) -> None:
        now = self.clock()
        wait = MIN_CALL_INTERVAL - (now - self._last_call)
        if wait > 0:
            self.sleeper(wait)
        self._last_call = self.clock()

    @staticmethod
    def _parse_reply(text: str) -> str:
        try:
            body = json.loads(text)
            return body["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
