"""JSON-over-HTTP completion backend with retries and client-side rate limiting."""

from __future__ import annotations

import os
import random
import threading
import time
from typing import Callable

import httpx

from ..errors import BackendHTTPError, BackendTimeout, GatewayError, MalformedResponse
from .types import CompletionRequest, CompletionResult

DEFAULT_API_KEY_ENV = "ABCOMPARE_API_KEY"


class TokenBucket:
    """Classic token bucket; ``acquire`` blocks until a token is available."""

    def __init__(self, rate_per_s: float, capacity: float | None = None, *,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if rate_per_s <= 0:
            raise ValueError("rate_per_s must be positive")
        self.rate = rate_per_s
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_s)
        self.tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            self._sleep(wait)


def _transient(status: int) -> bool:
    return status == 429 or status >= 500


class RemoteBackend:
    """POSTs ``{prompt, temperature, max_output_tokens}`` and reads ``{text}`` back.

    Transient failures (timeouts, connection errors, 429 and 5xx) are retried
    with exponential backoff and jitter; other statuses fail immediately.
    """

    def __init__(
        self,
        endpoint_url: str,
        *,
        api_key: str | None = None,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout_ms: int = 30_000,
        max_attempts: int = 3,
        base_delay_s: float = 0.5,
        backoff: float = 2.0,
        jitter: float = 0.2,
        rate_per_s: float | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.endpoint_url = endpoint_url
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        self.timeout_s = timeout_ms / 1000
        self.max_attempts = max_attempts
        self.base_delay_s = base_delay_s
        self.backoff = backoff
        self.jitter = jitter
        self.bucket = TokenBucket(rate_per_s, sleep=sleep) if rate_per_s else None
        self._client = client or httpx.Client(timeout=self.timeout_s)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._rng_lock = threading.Lock()
        self.backend_id = f"remote:{endpoint_url}"

    def close(self) -> None:
        self._client.close()

    def delay(self, attempt: int) -> float:
        """Sleep before retry number ``attempt`` (1-based)."""
        with self._rng_lock:
            factor = self._rng.uniform(1 - self.jitter, 1 + self.jitter)
        return self.base_delay_s * self.backoff ** (attempt - 1) * factor

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, req: CompletionRequest) -> CompletionResult:
        body = {
            "prompt": req.prompt,
            "temperature": req.temperature,
            "max_output_tokens": req.max_output_tokens,
        }
        last: GatewayError | None = None
        for attempt in range(1, self.max_attempts + 1):
            if attempt > 1:
                self._sleep(self.delay(attempt - 1))
            if self.bucket:
                self.bucket.acquire()
            start = time.perf_counter()
            try:
                resp = self._client.post(self.endpoint_url, json=body, headers=self._headers(),
                                         timeout=self.timeout_s)
            except httpx.TimeoutException as exc:
                last = BackendTimeout(f"request timed out after {self.timeout_s}s: {exc}")
                continue
            except httpx.TransportError as exc:
                last = GatewayError(f"transport error: {exc}")
                continue
            latency = int((time.perf_counter() - start) * 1000)
            if not 200 <= resp.status_code < 300:
                err = BackendHTTPError(resp.status_code, resp.text[:2000])
                if _transient(resp.status_code):
                    last = err
                    continue
                raise err
            try:
                data = resp.json()
            except ValueError as exc:
                raise MalformedResponse(f"response is not JSON: {exc}") from exc
            if not isinstance(data, dict) or not isinstance(data.get("text"), str):
                raise MalformedResponse("response JSON lacks a string 'text' field")
            return CompletionResult(data["text"], latency, self.backend_id)
        assert last is not None
        raise last
