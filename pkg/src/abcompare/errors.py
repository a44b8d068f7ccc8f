"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CompareError(Exception):
    """Base class for all errors raised by abcompare."""


class ConfigError(CompareError):
    pass


class CorpusError(CompareError):
    pass


class GatewayError(CompareError):
    """A completion request could not be served."""


class RequestTooLarge(GatewayError):
    def __init__(self, prompt_tokens: int, max_output_tokens: int, context_window: int):
        self.prompt_tokens = prompt_tokens
        self.max_output_tokens = max_output_tokens
        self.context_window = context_window
        super().__init__(
            f"request too large: {prompt_tokens} prompt + {max_output_tokens} output tokens "
            f"> context window {context_window}"
        )


class BackendTimeout(GatewayError):
    pass


class BackendHTTPError(GatewayError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        self.body = body
        super().__init__(f"backend returned HTTP {status}")


class MalformedResponse(GatewayError):
    pass


class ParseError(CompareError):
    """Stage output did not match the expected grammar."""

    def __init__(self, stage: str, raw: str, reason: str = "unparseable output"):
        self.stage = stage
        self.raw = raw
        self.reason = reason
        super().__init__(f"{stage}: {reason}")


class StageError(CompareError):
    """A pipeline stage failed; carries the stage tag and the traces recorded so far."""

    def __init__(self, stage: str, cause: BaseException, traces=()):
        self.stage = stage
        self.cause = cause
        self.traces = tuple(traces)
        super().__init__(f"stage {stage} failed: {cause}")
