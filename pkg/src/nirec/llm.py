"""Completion gateway: backends, durable response cache and retry policy."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

import httpx

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "text-davinci-003"
API_KEY_ENV = "LLM_API_KEY"


class LLMError(RuntimeError):
    pass


class TransportError(LLMError):
    """Network failure or 5xx; retried."""


class RateLimitError(LLMError):
    """HTTP 429; retried."""


class MalformedResponseError(LLMError):
    pass


class RetriesExhaustedError(LLMError):
    def __init__(self, attempts: int, last: Exception):
        super().__init__(f"request failed after {attempts} attempts: {last}")
        self.attempts = attempts
        self.last = last


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    model: str = DEFAULT_MODEL
    backend_id: str = "stub"
    temperature: float = 0.0
    max_tokens: int = 512
    stop: tuple[str, ...] | None = None
    # hints for the stub backend only; never part of the cache key
    context: Mapping[str, Any] | None = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.stop is not None and not isinstance(self.stop, tuple):
            object.__setattr__(self, "stop", tuple(self.stop))


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    cached: bool
    latency_ms: int
    backend_meta: str = ""
    attempts: int = 0
    key: str = ""


def cache_key(request: CompletionRequest) -> str:
    canonical = json.dumps(
        [
            request.backend_id,
            request.model,
            repr(float(request.temperature)),
            int(request.max_tokens),
            list(request.stop) if request.stop is not None else None,
            request.prompt,
        ],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed response store.

    With a directory, each response is ``<dir>/<key[:2]>/<key>.txt`` and
    ``index.jsonl`` records one line per write. Without one, entries live in
    memory.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._memory: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.txt"

    def get(self, key: str) -> str | None:
        if self.directory is None:
            return self._memory.get(key)
        path = self._path(key)
        if not path.is_file():
            return None
        with open(path, encoding="utf-8", newline="") as fh:
            return fh.read()

    def put(self, key: str, text: str, meta: Mapping[str, Any] | None = None) -> None:
        if self.directory is None:
            self._memory[key] = text
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        record = {"key": key, "created": time.time(), **(meta or {})}
        with self._lock, open(self.directory / "index.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def __contains__(self, key: str) -> bool:
        return self.get(key) is not None


class Backend(Protocol):
    def __call__(self, request: CompletionRequest) -> tuple[str, str]:
        """Return ``(text, backend_meta)`` or raise an :class:`LLMError`."""


class HttpBackend:
    """OpenAI-compatible ``POST {api_base}/completions`` client."""

    def __init__(
        self,
        api_base: str = "https://api.openai.com/v1",
        api_key: str | None = None,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.api_base = api_base.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.client = client or httpx.Client(timeout=timeout)

    def payload(self, request: CompletionRequest) -> dict:
        return {
            "model": request.model,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "stop": list(request.stop) if request.stop else None,
        }

    def __call__(self, request: CompletionRequest) -> tuple[str, str]:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self.client.post(f"{self.api_base}/completions", json=self.payload(request), headers=headers)
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429:
            raise RateLimitError(f"rate limited: {resp.text[:200]}")
        if resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise LLMError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["choices"][0]["text"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected completion payload: {resp.text[:200]}") from exc
        if not isinstance(text, str):
            raise MalformedResponseError("completion text is not a string")
        meta = json.dumps({"id": body.get("id"), "model": body.get("model")}, sort_keys=True)
        return text, meta


_STEP_MARK = re.compile(r"Step ([123]):")
_CANDIDATE_LINE = re.compile(r"Candidate Set \(candidate movies\):\s*(.*)")
_WATCHED_LINE = re.compile(r"(?:The movies I have watched \(watched movies\):|including)\s*(.*)")
_K = re.compile(r"recommend (\d+) movies")

PREFERENCE_BOILERPLATE = (
    "I value engaging stories with strong characters, and I enjoy a mix of drama, "
    "comedy and action with well-known casts."
)


def _split_titles(blob: str) -> list[str]:
    # titles end in "(year)"; commas inside titles ("Rock, The (1996)") must survive
    blob = blob.strip().rstrip(".")
    parts = re.split(r"(?<=\)),\s+", blob)
    return [p.strip() for p in parts if p.strip()]


def _from_prompt(pattern: re.Pattern, prompt: str) -> list[str]:
    match = pattern.search(prompt)
    if not match:
        return []
    blob = match.group(1)
    blob = blob.split(", can you recommend")[0]
    return _split_titles(blob)


def stub_complete(
    request: CompletionRequest,
    script: Mapping[str, str] | None = None,
    candidate_context: Mapping[str, Any] | None = None,
) -> str:
    """Deterministic offline answer for ``request``.

    Scripted digests win. Otherwise the answer depends on the last
    instruction in the prompt: step 1 gets a fixed preference summary,
    step 2 a numbered list of watched titles, step 3 (or any prompt carrying
    the arrow format) one ``watched: <- candidate ->`` line per candidate in
    score order, and a plain question a numbered list of candidates.
    """
    key = cache_key(request)
    if script and key in script:
        return script[key]
    ctx = dict(candidate_context or request.context or {})
    prompt = request.prompt
    candidates = list(ctx.get("candidates") or _from_prompt(_CANDIDATE_LINE, prompt))
    watched = list(ctx.get("watched") or _from_prompt(_WATCHED_LINE, prompt))
    k_match = _K.search(prompt)
    k = int(ctx.get("k") or (k_match.group(1) if k_match else 10))

    steps = [(m.start(), int(m.group(1))) for m in _STEP_MARK.finditer(prompt)]
    last = max(steps)[1] if steps else None
    if last == 1:
        return " " + PREFERENCE_BOILERPLATE
    if last == 2:
        picks = watched[:5] or ["(none)"]
        return "\n" + "\n".join(f"{i}. {t}." for i, t in enumerate(picks, start=1))
    if last == 3 or "<-" in prompt:
        anchors = watched[:k] or ["a movie I watched"]
        lines = [
            f"{i}. {anchors[(i - 1) % len(anchors)]}: <- {title} ->"
            for i, title in enumerate(candidates[:k], start=1)
        ]
        return "\n" + "\n".join(lines) if lines else " I cannot find suitable movies."
    if candidates:
        return "\n" + "\n".join(f"{i}. {t}" for i, t in enumerate(candidates[:k], start=1))
    return " I would need more information to recommend movies."


class StubBackend:
    def __init__(self, script: Mapping[str, str] | None = None):
        self.script = dict(script or {})
        self.calls = 0

    def __call__(self, request: CompletionRequest) -> tuple[str, str]:
        self.calls += 1
        return stub_complete(request, self.script), "stub"


class LLMGateway:
    """Uniform ``complete()`` over registered backends.

    Cached keys never reach the backend. Transport and rate-limit failures
    are retried up to ``max_attempts`` times with full-jitter exponential
    backoff (``uniform(0, base_delay * factor**(attempt-1))``).
    """

    def __init__(
        self,
        backends: Mapping[str, Backend],
        cache: ResponseCache | None = None,
        *,
        max_attempts: int = 5,
        base_delay: float = 2.0,
        factor: float = 2.0,
        concurrency: int = 4,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        if concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        self.backends = dict(backends)
        self.cache = cache if cache is not None else ResponseCache()
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.factor = factor
        self.sleep = sleep
        self.rng = rng or random.Random()
        self.backend_calls = 0
        self._slots = threading.BoundedSemaphore(concurrency)
        self._count_lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        if request.backend_id not in self.backends:
            raise LLMError(f"backend {request.backend_id!r} is not registered")
        key = cache_key(request)
        start = time.perf_counter()
        hit = self.cache.get(key)
        if hit is not None:
            return CompletionResponse(hit, True, _ms(start), "cache", 0, key)

        backend = self.backends[request.backend_id]
        for attempt in range(1, self.max_attempts + 1):
            try:
                with self._slots:
                    with self._count_lock:
                        self.backend_calls += 1
                    text, meta = backend(request)
                break
            except (TransportError, RateLimitError) as exc:
                if attempt == self.max_attempts:
                    raise RetriesExhaustedError(attempt, exc) from exc
                delay = self.rng.uniform(0, self.base_delay * self.factor ** (attempt - 1))
                logger.warning("attempt %d/%d failed (%s); retrying in %.1fs", attempt, self.max_attempts, exc, delay)
                self.sleep(delay)
        self.cache.put(key, text, {"backend": request.backend_id, "model": request.model})
        return CompletionResponse(text, False, _ms(start), meta, attempt, key)


def _ms(start: float) -> int:
    return int((time.perf_counter() - start) * 1000)


def make_gateway(
    backend: str = "stub",
    cache_dir: str | Path | None = None,
    api_base: str = "https://api.openai.com/v1",
    concurrency: int = 4,
    script: Mapping[str, str] | None = None,
) -> LLMGateway:
    if backend == "stub":
        backends: dict[str, Backend] = {"stub": StubBackend(script)}
    elif backend == "http":
        backends = {"http": HttpBackend(api_base)}
    else:
        raise ValueError(f"unknown backend {backend!r}; expected 'http' or 'stub'")
    return LLMGateway(backends, ResponseCache(cache_dir), concurrency=concurrency)
