"""Single choke point for model calls.

Every stage talks to models through :class:`Gateway.chat`. Endpoints are
either OpenAI-compatible chat-completions servers or a scripted mock
(``mock:`` URL scheme) that fails closed on any unscripted request.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from collections.abc import Callable, Iterator, Mapping, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import httpx
import yaml

from .errors import (
    EndpointUnknown,
    ExhaustedRetries,
    ResponseUnparseable,
    ScriptMiss,
    SynthRankError,
    UnterminatedTrace,
)

logger = logging.getLogger(__name__)

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
TRANSIENT_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ChatRequest:
    endpoint_id: str
    user: str
    stage: str = ""
    system: str | None = None
    temperature: float = 0.0
    max_tokens: int = 1024
    want_logprobs: bool = False
    logprob_top_k: int = 5

    def __post_init__(self) -> None:
        if not self.user:
            raise ValueError("user message must be non-empty")
        if not math.isfinite(self.temperature) or self.temperature < 0:
            raise ValueError(f"bad temperature {self.temperature}")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if not 1 <= self.logprob_top_k <= 20:
            raise ValueError("logprob_top_k must be in 1..20")

    def summary(self) -> str:
        text = " ".join(self.user.split())
        return f"stage={self.stage or '-'} endpoint={self.endpoint_id} user={text[:160]!r}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "endpoint_id": self.endpoint_id,
            "stage": self.stage,
            "system": self.system,
            "user": self.user,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "want_logprobs": self.want_logprobs,
            "logprob_top_k": self.logprob_top_k,
        }


@dataclass(frozen=True)
class ChatExchange:
    request: ChatRequest
    raw_text: str
    final_text: str
    reasoning_trace: str | None = None
    first_token_logprobs: Mapping[str, float] | None = None
    attempt_count: int = 1

    def __post_init__(self) -> None:
        if self.attempt_count < 1:
            raise ValueError("attempt_count must be positive")
        if self.first_token_logprobs is not None:
            if any(v > 0 for v in self.first_token_logprobs.values()):
                raise ValueError("log-probabilities must be <= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "request": self.request.to_dict(),
            "raw_text": self.raw_text,
            "reasoning_trace": self.reasoning_trace,
            "final_text": self.final_text,
            "first_token_logprobs": dict(self.first_token_logprobs) if self.first_token_logprobs else None,
            "attempt_count": self.attempt_count,
        }


def split_reasoning(raw_text: str) -> tuple[str | None, str]:
    """Split a leading ``<think>...</think>`` block from the answer.

    Returns ``(trace, final)``; ``trace`` is None when the text does not open
    with a think block, in which case ``final`` is the input unchanged.
    """
    stripped = raw_text.lstrip()
    if not stripped.startswith(THINK_OPEN):
        return None, raw_text
    end = stripped.find(THINK_CLOSE, len(THINK_OPEN))
    if end < 0:
        raise UnterminatedTrace("think block opened but never closed")
    trace = stripped[len(THINK_OPEN):end].strip()
    final = stripped[end + len(THINK_CLOSE):].strip()
    return trace, final


def backoff_delay(attempt: int, base: float, cap: float) -> float:
    """Delay to wait after failed attempt number ``attempt`` (1-based)."""
    return min(cap, base * 2 ** (attempt - 1))


# -- endpoints ----------------------------------------------------------------


@dataclass
class EndpointSpec:
    id: str
    base_url: str
    model: str = ""
    api_key_env: str | None = None
    max_concurrency: int = 4
    max_attempts: int = 5
    backoff_base: float = 0.5
    backoff_cap: float = 30.0
    timeout: float = 120.0

    @property
    def is_mock(self) -> bool:
        return self.base_url.startswith("mock:")


@dataclass
class _Completion:
    text: str
    reasoning: str | None = None
    logprobs: dict[str, float] | None = None


class _Transient(Exception):
    def __init__(self, status: int | str) -> None:
        self.status = status
        super().__init__(str(status))


class HttpBackend:
    """Client for ``POST {base_url}/chat/completions`` (OpenAI wire shape)."""

    def __init__(self, spec: EndpointSpec, transport: httpx.BaseTransport | None = None) -> None:
        self.spec = spec
        headers = {"Content-Type": "application/json"}
        if spec.api_key_env:
            key = os.environ.get(spec.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
            else:
                logger.warning("environment variable %s is not set", spec.api_key_env)
        self._client = httpx.Client(
            base_url=spec.base_url.rstrip("/"), headers=headers, timeout=spec.timeout, transport=transport
        )

    def payload(self, req: ChatRequest) -> dict[str, Any]:
        messages = []
        if req.system:
            messages.append({"role": "system", "content": req.system})
        messages.append({"role": "user", "content": req.user})
        body: dict[str, Any] = {
            "model": self.spec.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.want_logprobs:
            body["logprobs"] = True
            body["top_logprobs"] = req.logprob_top_k
        return body

    def complete(self, req: ChatRequest) -> _Completion:
        try:
            resp = self._client.post("/chat/completions", json=self.payload(req))
        except httpx.TransportError as exc:
            raise _Transient(type(exc).__name__) from exc
        if resp.status_code in TRANSIENT_STATUS:
            raise _Transient(resp.status_code)
        if resp.status_code >= 400:
            raise SynthRankError(f"{self.spec.id}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            message = data["choices"][0]["message"]
            text = message.get("content") or ""
            reasoning = message.get("reasoning_content") or message.get("reasoning")
            lp = (data["choices"][0].get("logprobs") or {}).get("content")
        except (ValueError, KeyError, IndexError, TypeError, AttributeError) as exc:
            raise ResponseUnparseable(f"{self.spec.id}: unexpected response body") from exc
        logprobs = first_answer_token_logprobs(lp, skip_trace=reasoning is None) if lp else None
        return _Completion(text, reasoning, logprobs)

    def close(self) -> None:
        self._client.close()


def first_answer_token_logprobs(tokens: Sequence[Mapping[str, Any]], skip_trace: bool = True) -> dict[str, float] | None:
    """Top log-probabilities at the first non-blank token after any think block."""
    start = 0
    if skip_trace:
        text = ""
        for i, tok in enumerate(tokens):
            text += tok.get("token", "")
            if THINK_CLOSE in text:
                start = i + 1
                break
        else:
            start = 0
    for tok in tokens[start:]:
        if tok.get("token", "").strip():
            out = {t["token"]: float(t["logprob"]) for t in tok.get("top_logprobs") or []}
            out.setdefault(tok["token"], float(tok["logprob"]))
            return out
    return None


# -- mock ---------------------------------------------------------------------


@dataclass
class MockResponse:
    text: str
    reasoning: str | None = None
    logprobs: dict[str, float] | None = None

    @classmethod
    def coerce(cls, obj: Any) -> MockResponse:
        if isinstance(obj, MockResponse):
            return obj
        if isinstance(obj, str):
            return cls(obj)
        if isinstance(obj, Mapping) and "text" in obj:
            lp = obj.get("logprobs")
            return cls(str(obj["text"]), obj.get("reasoning"), {str(k): float(v) for k, v in lp.items()} if lp else None)
        raise ValueError(f"bad mock response {obj!r}")


@dataclass
class ScriptEntry:
    """Matches requests by stage tag ("*" for any) and prompt substring.

    With several responses, successive matches walk the list and then keep
    returning the last one.
    """

    stage: str
    contains: str
    responses: list[MockResponse]
    _calls: int = field(default=0, repr=False)

    def matches(self, req: ChatRequest) -> bool:
        if self.stage not in ("*", req.stage):
            return False
        return self.contains in f"{req.system or ''}\n{req.user}"

    def next_response(self) -> MockResponse:
        resp = self.responses[min(self._calls, len(self.responses) - 1)]
        self._calls += 1
        return resp


class MockBackend:
    def __init__(self, entries: Sequence[ScriptEntry]) -> None:
        if not entries:
            raise ValueError("mock script must contain at least one entry")
        self.entries = list(entries)
        self._lock = threading.Lock()

    def complete(self, req: ChatRequest) -> _Completion:
        with self._lock:
            for entry in self.entries:
                if entry.matches(req):
                    r = entry.next_response()
                    break
            else:
                raise ScriptMiss(req.summary())
        return _Completion(r.text, r.reasoning, dict(r.logprobs) if r.logprobs else None)

    def close(self) -> None:
        pass


def mock_register(script: Sequence[Any]) -> MockBackend:
    """Build a mock endpoint from ``(matcher, response)`` entries.

    Each entry is a ``ScriptEntry``, a mapping with ``stage``/``contains`` and
    ``response`` or ``responses``, or a ``((stage, substring), response)`` tuple.
    """
    entries = []
    for item in script:
        if isinstance(item, ScriptEntry):
            entries.append(item)
        elif isinstance(item, Mapping):
            raw = item["responses"] if "responses" in item else [item["response"]]
            entries.append(
                ScriptEntry(str(item.get("stage", "*")), str(item.get("contains", "")), [MockResponse.coerce(r) for r in raw])
            )
        else:
            (stage, contains), response = item
            raw = response if isinstance(response, list) else [response]
            entries.append(ScriptEntry(stage, contains, [MockResponse.coerce(r) for r in raw]))
    if any(not e.responses for e in entries):
        raise ValueError("every mock script entry needs at least one response")
    return MockBackend(entries)


def load_mock_script(path: str | Path) -> MockBackend:
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f) if str(path).endswith((".yaml", ".yml")) else json.load(f)
    if isinstance(data, Mapping):
        data = data.get("script", [])
    return mock_register(data or [])


# -- gateway ------------------------------------------------------------------


class Gateway:
    """Routes requests to endpoints with retries and a per-endpoint in-flight cap.

    ``recording()`` collects the exchanges made by the current thread, which
    lets callers assemble a deterministic transcript from concurrent work.
    """

    def __init__(
        self,
        endpoints: Mapping[str, EndpointSpec],
        backends: Mapping[str, Any] | None = None,
        sleep: Callable[[float], None] = time.sleep,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.endpoints = dict(endpoints)
        self._backends: dict[str, Any] = dict(backends or {})
        self._sleep = sleep
        self._transport = transport
        self._limits = {eid: threading.BoundedSemaphore(max(1, spec.max_concurrency)) for eid, spec in self.endpoints.items()}
        self._lock = threading.Lock()
        self._local = threading.local()
        self.request_counts: dict[str, int] = {eid: 0 for eid in self.endpoints}

    @classmethod
    def with_mock(cls, endpoint_id: str, backend: MockBackend, **spec_kwargs: Any) -> Gateway:
        spec = EndpointSpec(id=endpoint_id, base_url="mock:inline", **spec_kwargs)
        return cls({endpoint_id: spec}, backends={endpoint_id: backend})

    def add_endpoint(self, spec: EndpointSpec, backend: Any | None = None) -> None:
        self.endpoints[spec.id] = spec
        self._limits[spec.id] = threading.BoundedSemaphore(max(1, spec.max_concurrency))
        self.request_counts.setdefault(spec.id, 0)
        if backend is not None:
            self._backends[spec.id] = backend

    def _backend(self, endpoint_id: str) -> Any:
        with self._lock:
            if endpoint_id not in self._backends:
                spec = self.endpoints[endpoint_id]
                if spec.is_mock:
                    self._backends[endpoint_id] = load_mock_script(spec.base_url[len("mock:"):])
                else:
                    self._backends[endpoint_id] = HttpBackend(spec, self._transport)
            return self._backends[endpoint_id]

    def chat(self, request: ChatRequest) -> ChatExchange:
        spec = self.endpoints.get(request.endpoint_id)
        if spec is None:
            raise EndpointUnknown(request.endpoint_id)
        backend = self._backend(request.endpoint_id)
        attempt = 0
        while True:
            attempt += 1
            with self._lock:
                self.request_counts[spec.id] += 1
            try:
                with self._limits[spec.id]:
                    comp = backend.complete(request)
                break
            except _Transient as exc:
                if attempt >= spec.max_attempts:
                    raise ExhaustedRetries(spec.id, attempt, exc.status) from None
                delay = backoff_delay(attempt, spec.backoff_base, spec.backoff_cap)
                logger.warning("%s: transient failure %s, retrying in %.2fs", spec.id, exc.status, delay)
                self._sleep(delay)

        try:
            trace, final = split_reasoning(comp.text)
        except UnterminatedTrace:
            # usually a reply cut off by max_tokens: keep the partial trace, no answer
            logger.warning("%s: unterminated think block in reply", spec.id)
            trace, final = comp.text.lstrip()[len(THINK_OPEN):].strip(), ""
        if comp.reasoning is not None:
            # a separate reasoning channel wins over inline tags
            trace = comp.reasoning.strip()
        exchange = ChatExchange(
            request=request,
            raw_text=comp.text,
            final_text=final,
            reasoning_trace=trace,
            first_token_logprobs=comp.logprobs if request.want_logprobs else None,
            attempt_count=attempt,
        )
        for rec in getattr(self._local, "stack", []):
            rec.append(exchange)
        return exchange

    @contextmanager
    def recording(self) -> Iterator[list[ChatExchange]]:
        stack = self._local.__dict__.setdefault("stack", [])
        rec: list[ChatExchange] = []
        stack.append(rec)
        try:
            yield rec
        finally:
            stack.pop()

    def close(self) -> None:
        for b in self._backends.values():
            b.close()


def transcript_lines(exchanges: Sequence[ChatExchange]) -> str:
    return "".join(json.dumps(e.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for e in exchanges)
