"""Chat-completion backends: live HTTP, scripted mock, and record/replay cassettes."""

from __future__ import annotations

import hashlib
import json
import os
import time
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

ENV_BASE = "CC_LLM_API_BASE"
ENV_KEY = "CC_LLM_API_KEY"
ENV_MODEL = "CC_LLM_MODEL"


class LiveError(RuntimeError):
    pass


class ReplayMiss(KeyError):
    def __init__(self, key: str):
        super().__init__(key)
        self.key = key

    def __str__(self):
        return f"no cassette entry for request key {self.key}"


class ScriptExhausted(RuntimeError):
    pass


class CassetteIOError(OSError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    system_text: str
    user_text: str
    temperature: float = 0.0
    max_tokens: int = 64

    def body(self) -> dict:
        return {
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": self.system_text},
                {"role": "user", "content": self.user_text},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


def request_key(req: ChatRequest) -> str:
    """SHA-256 over the request content; no timestamps or sampling knobs."""
    payload = json.dumps([req.model_name, req.system_text, req.user_text], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class CassetteEntry:
    key: str
    response_text: str
    recorded_at: str


class Cassette:
    """Exact-match prompt -> response store persisted as JSON lines."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.entries: dict[str, CassetteEntry] = {}

    @classmethod
    def load(cls, path: str | Path) -> "Cassette":
        cas = cls(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise CassetteIOError(f"cannot read cassette {path}: {exc}") from exc
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                entry = CassetteEntry(raw["key"], raw["response_text"], raw.get("recorded_at", ""))
            except (ValueError, KeyError, TypeError) as exc:
                raise CassetteIOError(f"{path}:{lineno}: malformed cassette line") from exc
            cas.entries[entry.key] = entry
        return cas

    def __len__(self):
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def lookup(self, req: ChatRequest) -> str | None:
        e = self.entries.get(request_key(req))
        return e.response_text if e else None

    def record(self, req: ChatRequest, response_text: str, recorded_at: str | None = None) -> None:
        if recorded_at is None:
            recorded_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
        key = request_key(req)
        self.entries.pop(key, None)
        self.entries[key] = CassetteEntry(key, response_text, recorded_at)

    def dumps(self) -> str:
        return "".join(
            json.dumps({"key": e.key, "response_text": e.response_text, "recorded_at": e.recorded_at},
                       ensure_ascii=False) + "\n"
            for e in self.entries.values()
        )

    def save(self, path: str | Path | None = None) -> None:
        target = Path(path) if path is not None else self.path
        if target is None:
            raise CassetteIOError("cassette has no path")
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(self.dumps(), encoding="utf-8")
        except OSError as exc:
            raise CassetteIOError(f"cannot write cassette {target}: {exc}") from exc


def record(cassette: Cassette, req: ChatRequest, response_text: str) -> None:
    cassette.record(req, response_text)


class MockBackend:
    """Returns scripted responses in order, or delegates to a responder callable."""

    def __init__(self, script: Iterable[str] | Callable[[ChatRequest], str]):
        if callable(script):
            self._responder = script
            self._script = None
        else:
            self._responder = None
            self._script = list(script)
        self.calls = 0

    def complete(self, req: ChatRequest) -> str:
        self.calls += 1
        if self._responder is not None:
            return self._responder(req)
        if not self._script:
            raise ScriptExhausted(f"mock script exhausted after {self.calls - 1} calls")
        return self._script.pop(0)


class ReplayBackend:
    def __init__(self, cassette: Cassette, strict: bool = True, fallback=None):
        self.cassette = cassette
        self.strict = strict
        self.fallback = fallback
        self.hits = 0

    def complete(self, req: ChatRequest) -> str:
        text = self.cassette.lookup(req)
        if text is not None:
            self.hits += 1
            return text
        if self.strict or self.fallback is None:
            raise ReplayMiss(request_key(req))
        return self.fallback.complete(req)


class RecordingBackend:
    """Wraps another backend and writes every exchange into a cassette."""

    def __init__(self, inner, cassette: Cassette, clock: Callable[[], str] | None = None):
        self.inner = inner
        self.cassette = cassette
        self.clock = clock

    def complete(self, req: ChatRequest) -> str:
        text = self.inner.complete(req)
        self.cassette.record(req, text, self.clock() if self.clock else None)
        return text


class LiveBackend:
    """POSTs to ``{base}/chat/completions``; retries transient failures."""

    def __init__(self, base_url: str | None = None, api_key: str | None = None, model: str | None = None,
                 max_retries: int = 3, backoff: float = 0.5, timeout: float = 60.0, transport=None,
                 sleep: Callable[[float], None] = time.sleep):
        self.base_url = (base_url or os.environ.get(ENV_BASE, "https://api.openai.com/v1")).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL)
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self.transport = transport
        self.sleep = sleep

    def _client(self):
        import httpx

        return httpx.Client(timeout=self.timeout, transport=self.transport)

    def complete(self, req: ChatRequest) -> str:
        import httpx

        body = req.body()
        if self.model and req.model_name in ("", "default"):
            body["model"] = self.model
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc: Exception | None = None
        with self._client() as client:
            for attempt in range(self.max_retries):
                if attempt:
                    self.sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    resp = client.post(f"{self.base_url}/chat/completions", json=body, headers=headers)
                except httpx.HTTPError as exc:
                    last_exc = exc
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_exc = LiveError(f"HTTP {resp.status_code}")
                    continue
                if resp.status_code >= 400:
                    raise LiveError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise LiveError("malformed chat-completion response") from exc
        raise LiveError(f"request failed after {self.max_retries} attempts: {last_exc}")


def complete(backend, req: ChatRequest) -> str:
    return backend.complete(req)
