"""Completion backends: a deterministic extractive mock and an OpenAI-compatible HTTP client."""

from __future__ import annotations

import logging
import os
import random
import re
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)


class LLMError(RuntimeError):
    """Base class for backend failures."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class RetriableError(LLMError):
    """Transport failure, rate limiting or server error that outlived the retry budget."""


class PermanentError(LLMError):
    """A failure that retrying will not fix (bad credentials, bad request, empty body)."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_output_chars: int = 4000
    temperature: float = 0.0
    request_tag: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_output_chars <= 0:
            raise ValueError("max_output_chars must be positive")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    backend_name: str
    latency_ms: int = 0
    attempt_count: int = 1


class LLMBackend(Protocol):
    name: str

    def complete(self, req: CompletionRequest) -> CompletionResult: ...


# ---------------------------------------------------------------------------
# offline mock

CLUE_REGION_RE = re.compile(r'"([^"\n]{1,40})"\s*(?:is|are|为)\s*"([^"]*)"')
_CJK = "㐀-䶿一-鿿豈-﫿"
TOKEN_RE = re.compile(rf"[{_CJK}]+|[^\W_{_CJK}]+(?:[-'][^\W_{_CJK}]+)*")
_LIST_SPLIT_RE = re.compile(r"\s*[,、，]\s*")


def tokenize(text: str) -> list[str]:
    """Split on whitespace, punctuation, and boundaries between CJK and other scripts."""
    return TOKEN_RE.findall(text)


def rank_tokens(texts: Sequence[str], top_j: int, min_chars: int = 2) -> list[str]:
    counts = Counter(t for text in texts for t in tokenize(text) if len(t) >= min_chars)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [tok for tok, _ in ranked[:top_j]]


class MockLLM:
    """Extractive stand-in for a chat model.

    Reads the ``"label" is "value"`` / ``"label"为"value"`` regions a
    rendered template contains and answers with the most frequent tokens.
    When a region carries a candidate list (label in ``candidate_labels``)
    the mock instead echoes the first ``top_j`` candidates, which is how a
    well-behaved model answers a selection prompt.
    """

    name = "mock"

    def __init__(
        self,
        top_j: int = 5,
        delimiter: str = "comma",
        candidate_labels: Sequence[str] = ("candidates", "candidate tags", "候选标签"),
    ):
        if top_j < 1:
            raise ValueError("top_j must be >= 1")
        self.top_j = top_j
        self.sep = "、" if delimiter == "ideographic_enum" else ", "
        self.candidate_labels = frozenset(candidate_labels)

    def respond(self, prompt: str) -> str:
        regions = CLUE_REGION_RE.findall(prompt)
        for label, value in regions:
            if label in self.candidate_labels:
                cands = [c for c in _LIST_SPLIT_RE.split(value.strip()) if c]
                return self.sep.join(cands[: self.top_j])
        texts = [value for label, value in regions if label not in self.candidate_labels]
        return self.sep.join(rank_tokens(texts, self.top_j))

    def complete(self, req: CompletionRequest) -> CompletionResult:
        return CompletionResult(text=self.respond(req.prompt), backend_name=self.name)


# ---------------------------------------------------------------------------
# HTTP transport shared by the chat and embedding clients


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    base_delay_s: float = 1.0
    jitter: float = 0.1
    deterministic: bool = False

    def delay(self, retry_index: int, rng: random.Random | None = None) -> float:
        """Seconds to wait before retry number ``retry_index`` (0-based): base * 2**k."""
        d = self.base_delay_s * (2**retry_index)
        if not self.deterministic and self.jitter > 0:
            d += (rng or random).uniform(0, self.jitter * d)
        return d


class RateLimiter:
    """Token bucket with capacity one: at most one request per ``interval_s``.

    Safe to share between threads; waiting happens outside the lock.
    """

    def __init__(self, interval_s: float = 0.25, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval_s = interval_s
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_free = float("-inf")

    def acquire(self) -> float:
        if self.interval_s <= 0:
            return 0.0
        with self._lock:
            now = self._clock()
            slot = max(now, self._next_free)
            self._next_free = slot + self.interval_s
        wait = slot - now
        if wait > 0:
            self._sleep(wait)
        return wait


def _status_error(status: int, body: str, attempts: int) -> LLMError:
    snippet = body[:200]
    if status in (401, 403):
        return PermanentError(f"authentication failed (HTTP {status}): {snippet}", attempts)
    if status == 429 or status >= 500:
        return RetriableError(f"HTTP {status} after {attempts} attempts: {snippet}", attempts)
    return PermanentError(f"HTTP {status}: {snippet}", attempts)


class HttpJsonClient:
    """POSTs JSON with retries on 429/5xx/transport errors and client-side rate limiting."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        timeout_s: float = 60.0,
        retry: RetryPolicy = RetryPolicy(),
        rate_limiter: RateLimiter | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(base_url=base_url.rstrip("/"), headers=headers,
                                    timeout=timeout_s, transport=transport)
        self.retry = retry
        self.rate_limiter = rate_limiter
        self._sleep = sleep
        self._rng = random.Random(0) if retry.deterministic else random.Random()

    def post(self, path: str, payload: dict[str, Any]) -> tuple[Any, int]:
        """Return (decoded JSON body, attempt count)."""
        last: LLMError | None = None
        for attempt in range(1, self.retry.max_attempts + 1):
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            try:
                resp = self._client.post(path, json=payload)
            except httpx.TransportError as exc:
                last = RetriableError(f"transport error after {attempt} attempts: {exc}", attempt)
            else:
                if resp.status_code == 200:
                    if not resp.content.strip():
                        raise PermanentError("empty response body", attempt)
                    try:
                        return resp.json(), attempt
                    except ValueError as exc:
                        raise PermanentError(f"response is not JSON: {exc}", attempt) from exc
                last = _status_error(resp.status_code, resp.text, attempt)
                if isinstance(last, PermanentError):
                    raise last
            if attempt < self.retry.max_attempts:
                delay = self.retry.delay(attempt - 1, self._rng)
                logger.warning("%s; retrying in %.2fs", last, delay)
                self._sleep(delay)
        assert last is not None
        raise last

    def close(self) -> None:
        self._client.close()


class ChatCompletionClient:
    """OpenAI-compatible ``/chat/completions`` backend with a single user message."""

    def __init__(self, base_url: str, model: str, api_key: str | None = None,
                 api_key_env: str = "OPENAI_API_KEY", **http_kwargs):
        if api_key is None:
            api_key = os.environ.get(api_key_env)
        self.model = model
        self.name = f"chat:{model}"
        self.http = HttpJsonClient(base_url, api_key=api_key, **http_kwargs)

    def complete(self, req: CompletionRequest) -> CompletionResult:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
        }
        start = time.perf_counter()
        body, attempts = self.http.post("/chat/completions", payload)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise PermanentError("empty response body: no choices[0].message.content", attempts) from exc
        if not isinstance(text, str) or not text.strip():
            raise PermanentError("empty response body: blank completion", attempts)
        return CompletionResult(
            text=text[: req.max_output_chars],
            backend_name=self.name,
            latency_ms=int((time.perf_counter() - start) * 1000),
            attempt_count=attempts,
        )


def batch_complete(backend: LLMBackend, reqs: Sequence[CompletionRequest],
                   parallelism: int = 1) -> list[CompletionResult | Exception]:
    """Complete every request; slot i holds the result or the exception for reqs[i]."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    def one(req: CompletionRequest) -> CompletionResult | Exception:
        try:
            return backend.complete(req)
        except Exception as exc:  # failures stay in their slot
            return exc

    if parallelism == 1 or len(reqs) <= 1:
        results = [one(r) for r in reqs]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, reqs))
    failures = sum(isinstance(r, Exception) for r in results)
    if failures:
        logger.warning("%d of %d completions failed", failures, len(results))
    return results
