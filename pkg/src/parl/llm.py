"""Chat-completion backends: live HTTP, two mocks, and transcript replay.

Every call made through :class:`LLMClient` is appended to a JSONL transcript,
whatever the backend, so any run can later be replayed offline.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import requests

log = logging.getLogger(__name__)

STATE_MARKER = "Current state:"


class LLMError(RuntimeError):
    pass


class TransportError(LLMError):
    """Network failure or retryable server status."""


class LLMConfigError(LLMError):
    """4xx responses and missing configuration; never retried."""


class ReplayGapError(LLMError):
    def __init__(self, request_hash: str):
        super().__init__(f"no recorded response for request {request_hash}")
        self.request_hash = request_hash


class ScriptExhaustedError(LLMError):
    pass


class TranscriptCorruptError(LLMError):
    pass


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role.value, "content": self.content}


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 16

    def __post_init__(self):
        msgs = tuple(m if isinstance(m, ChatMessage) else ChatMessage(m["role"], m["content"])
                     for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        if not msgs:
            raise ValueError("request needs at least one message")
        if msgs[-1].role is not Role.USER:
            raise ValueError("last message must come from the user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": float(self.temperature),
            "max_tokens": int(self.max_tokens),
        }

    @classmethod
    def from_payload(cls, d: dict) -> "CompletionRequest":
        return cls(d["model"], tuple(ChatMessage(m["role"], m["content"]) for m in d["messages"]),
                   float(d["temperature"]), int(d["max_tokens"]))

    def canonical(self) -> bytes:
        return json.dumps(self.payload(), sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False).encode("utf-8")

    def digest(self) -> str:
        return hashlib.sha256(self.canonical()).hexdigest()

    @property
    def prompt(self) -> str:
        return self.messages[-1].content


@dataclass(frozen=True)
class TranscriptEntry:
    request_hash: str
    request: CompletionRequest
    response_text: str
    latency_ms: int
    timestamp: str

    def to_json(self) -> str:
        return json.dumps({
            "request_hash": self.request_hash,
            "request": self.request.payload(),
            "response_text": self.response_text,
            "latency_ms": self.latency_ms,
            "timestamp": self.timestamp,
        }, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TranscriptEntry":
        d = json.loads(line)
        return cls(d["request_hash"], CompletionRequest.from_payload(d["request"]),
                   d["response_text"], int(d["latency_ms"]), d["timestamp"])


def record_transcript(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")


def load_transcript(path) -> list[TranscriptEntry]:
    """Read a transcript; every line's hash must match its request."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                entry = TranscriptEntry.from_json(line)
            except (KeyError, ValueError) as exc:
                raise TranscriptCorruptError(f"{path}:{n}: unreadable entry ({exc})") from exc
            if entry.request.digest() != entry.request_hash:
                raise TranscriptCorruptError(f"{path}:{n}: hash mismatch")
            entries.append(entry)
    return entries


# ------------------------------------------------------------------ backends

class Backend:
    name = "backend"

    def complete(self, request: CompletionRequest) -> str:
        raise NotImplementedError

    def describe(self) -> str:
        return self.name


class HttpBackend(Backend):
    """OpenAI-compatible ``POST {base_url}/chat/completions``."""

    name = "http"

    def __init__(self, base_url: str = "https://api.openai.com/v1", api_key: Optional[str] = None,
                 timeout: float = 60.0, max_attempts: int = 5, backoff: float = 1.0,
                 max_backoff: float = 30.0, session: Optional[requests.Session] = None):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.max_backoff = max_backoff
        self.session = session or requests.Session()
        self.sleep = time.sleep

    @classmethod
    def from_env(cls, **kwargs) -> "HttpBackend":
        base = os.environ.get("LLM_BASE_URL", "https://api.openai.com/v1")
        key = os.environ.get("LLM_API_KEY")
        if not key:
            raise LLMConfigError("LLM_API_KEY is not set")
        return cls(base, key, **kwargs)

    def describe(self) -> str:
        return f"http:{self.base_url}"

    def complete(self, request: CompletionRequest) -> str:
        url = f"{self.base_url}/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = request.canonical()
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = self.session.post(url, data=body, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last = TransportError(str(exc))
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = TransportError(f"HTTP {resp.status_code}: {resp.text[:300]}")
                elif resp.status_code >= 400:
                    raise LLMConfigError(f"HTTP {resp.status_code}: {resp.text[:300]}")
                else:
                    try:
                        return resp.json()["choices"][0]["message"]["content"] or ""
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        last = TransportError(f"malformed response body: {exc}")
            if attempt + 1 < self.max_attempts:
                delay = min(self.max_backoff, self.backoff * 2 ** attempt)
                log.warning("LLM call failed (%s); retry %d in %.1fs", last, attempt + 1, delay)
                self.sleep(delay)
        raise TransportError(f"gave up after {self.max_attempts} attempts: {last}")


def current_state_text(prompt: str) -> str:
    for line in reversed(prompt.splitlines()):
        if line.startswith(STATE_MARKER):
            return line[len(STATE_MARKER):].strip()
    return prompt


class PolicyTableMock(Backend):
    """Answers by looking up the prompt's current state in a table.

    Keys are matched against the text after the last ``Current state:``
    line: exact match first, otherwise the longest key contained in it.
    """

    name = "policy-table"

    def __init__(self, table: dict[str, str], default: Optional[str] = None):
        self.table = dict(table)
        self.default = default

    def complete(self, request: CompletionRequest) -> str:
        state = current_state_text(request.prompt)
        if state in self.table:
            return self.table[state]
        hits = [k for k in self.table if k in state]
        if hits:
            return self.table[max(hits, key=len)]
        if self.default is None:
            raise LLMError(f"policy table has no entry for state {state!r}")
        return self.default


class ScriptedMock(Backend):
    name = "scripted"

    def __init__(self, replies):
        self.replies = deque(replies)
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            if not self.replies:
                raise ScriptExhaustedError("scripted mock has no replies left")
            return self.replies.popleft()


class ReplayBackend(Backend):
    """Serves recorded responses keyed by request hash, in recorded order."""

    name = "replay"

    def __init__(self, entries):
        self.queues: dict[str, deque] = defaultdict(deque)
        for e in entries:
            self.queues[e.request_hash].append(e.response_text)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "ReplayBackend":
        try:
            return cls(load_transcript(path))
        except OSError as exc:
            raise LLMConfigError(f"cannot read transcript {path}: {exc}") from exc

    def complete(self, request: CompletionRequest) -> str:
        h = request.digest()
        with self._lock:
            q = self.queues.get(h)
            if not q:
                raise ReplayGapError(h)
            return q.popleft()


def load_mock(path) -> Backend:
    """``{"table": {...}, "default": ...}`` or a JSON list of scripted replies."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise LLMConfigError(f"cannot load mock {path}: {exc}") from exc
    if isinstance(doc, list):
        return ScriptedMock([str(x) for x in doc])
    if isinstance(doc, dict) and "table" in doc:
        return PolicyTableMock(doc["table"], doc.get("default"))
    raise LLMConfigError(f"{path}: expected a reply list or an object with a 'table' key")


def backend_from_spec(spec: str) -> Backend:
    """Parse ``http``, ``mock:<path>`` or ``replay:<path>``."""
    kind, _, arg = spec.partition(":")
    if kind == "http":
        backend = HttpBackend.from_env()
        if arg:
            backend.base_url = arg.rstrip("/")
        return backend
    if kind == "mock" and arg:
        return load_mock(arg)
    if kind == "replay" and arg:
        return ReplayBackend.from_file(arg)
    raise LLMConfigError(f"unknown backend {spec!r}")


# -------------------------------------------------------------------- client

@dataclass
class LLMClient:
    """Backend plus transcript. ``transcript_path`` gets one line per call."""

    backend: Backend
    model: str = field(default_factory=lambda: os.environ.get("LLM_MODEL", "gpt-4o"))
    temperature: float = 0.0
    max_tokens: int = 16
    transcript_path: Optional[Path] = None
    entries: list = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()
        if self.transcript_path is not None:
            self.transcript_path = Path(self.transcript_path)
            self.transcript_path.parent.mkdir(parents=True, exist_ok=True)
            self.transcript_path.write_text("", encoding="utf-8")

    def request(self, messages) -> CompletionRequest:
        return CompletionRequest(self.model, tuple(messages), self.temperature, self.max_tokens)

    def complete(self, request: CompletionRequest) -> str:
        return complete(self.backend, request, self)

    def chat(self, messages) -> str:
        return self.complete(self.request(messages))

    def _append(self, entry: TranscriptEntry) -> None:
        with self._lock:
            self.entries.append(entry)
            if self.transcript_path is not None:
                with open(self.transcript_path, "a", encoding="utf-8") as fh:
                    fh.write(entry.to_json() + "\n")


def complete(backend: Backend, request: CompletionRequest, client: Optional[LLMClient] = None) -> str:
    """One completion; appended to ``client``'s transcript when given."""
    t0 = time.perf_counter()
    text = backend.complete(request)
    latency = int(round((time.perf_counter() - t0) * 1000))
    if client is not None:
        client._append(TranscriptEntry(request.digest(), request, text, latency,
                                       datetime.now(timezone.utc).isoformat()))
    return text
