"""LM completion gateway: request types, output grammar, backends and the dispatching client."""

from .client import Backend, Gateway
from .grammar import parse_stage_output, render_stage_output
from .offline import DeterministicBackend
from .remote import RemoteBackend, TokenBucket
from .types import CompletionRequest, CompletionResult, StageTag

__all__ = [
    "Backend", "CompletionRequest", "CompletionResult", "DeterministicBackend", "Gateway",
    "RemoteBackend", "StageTag", "TokenBucket", "parse_stage_output", "render_stage_output",
]
