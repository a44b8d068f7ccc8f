"""Gateway: context-window checks, parse-retry and bounded concurrent dispatch."""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, Protocol, TypeVar

from ..errors import ParseError, RequestTooLarge
from ..text import Tokenizer, count_tokens
from .grammar import parse_stage_output
from .prompts import FORMAT_REMINDER, render_prompt
from .types import CompletionRequest, CompletionResult, StageTag

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

MIN_OUTPUT_TOKENS = 16


class Backend(Protocol):
    backend_id: str

    def complete(self, req: CompletionRequest) -> CompletionResult: ...


class Gateway:
    """Front door for every LM call made by the pipeline."""

    def __init__(
        self,
        backend: Backend,
        *,
        context_window: int = 8192,
        max_output_tokens: int = 1024,
        max_parallel: int = 8,
        tokenizer: Tokenizer | None = None,
    ):
        if max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        self.backend = backend
        self.context_window = context_window
        self.max_output_tokens = max_output_tokens
        self.max_parallel = max_parallel
        self.tokenizer = tokenizer
        self._slots = threading.BoundedSemaphore(max_parallel)
        self._lock = threading.Lock()
        self.calls = 0
        self.parse_retries = 0

    @property
    def backend_id(self) -> str:
        return self.backend.backend_id

    def prompt_tokens(self, prompt: str) -> int:
        return count_tokens(prompt, self.tokenizer)

    def build_request(self, stage: StageTag, payload: str, *, temperature: float = 0.0,
                      suffix: str = "") -> CompletionRequest:
        prompt = render_prompt(stage, payload) + suffix
        used = self.prompt_tokens(prompt)
        room = self.context_window - used
        if room < MIN_OUTPUT_TOKENS:
            raise RequestTooLarge(used, MIN_OUTPUT_TOKENS, self.context_window)
        return CompletionRequest(StageTag(stage), prompt, temperature, min(self.max_output_tokens, room))

    def fits(self, stage: StageTag, payload: str) -> bool:
        try:
            self.build_request(stage, payload)
        except RequestTooLarge:
            return False
        return True

    def complete(self, req: CompletionRequest) -> CompletionResult:
        used = self.prompt_tokens(req.prompt)
        if used + req.max_output_tokens > self.context_window:
            raise RequestTooLarge(used, req.max_output_tokens, self.context_window)
        # the request type rejects non-zero temperature for AUTORATE; keep a second guard here
        assert req.stage_tag is not StageTag.AUTORATE or req.temperature == 0.0
        with self._slots:
            result = self.backend.complete(req)
        with self._lock:
            self.calls += 1
        return result

    def call(self, stage: StageTag, payload: str, *, temperature: float = 0.0) -> tuple[Any, str]:
        """Render, complete and parse one stage call; returns (parsed value, raw text).

        A parse failure is retried once with a format reminder appended.
        """
        req = self.build_request(stage, payload, temperature=temperature)
        raw = self.complete(req).text
        try:
            return parse_stage_output(stage, raw), raw
        except ParseError as first:
            log.warning("%s output unparseable (%s); re-prompting once", stage.value, first.reason)
            with self._lock:
                self.parse_retries += 1
            req = self.build_request(stage, payload, temperature=temperature, suffix=FORMAT_REMINDER)
            raw = self.complete(req).text
            return parse_stage_output(stage, raw), raw

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        """Apply ``fn`` concurrently; results come back in input order.

        Exceptions propagate from the first failing item in input order.
        """
        items = list(items)
        if len(items) <= 1 or self.max_parallel == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=min(self.max_parallel, len(items))) as pool:
            futures = [pool.submit(fn, x) for x in items]
            return [f.result() for f in futures]
