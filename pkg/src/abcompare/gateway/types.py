from __future__ import annotations

import enum
from dataclasses import dataclass


class StageTag(str, enum.Enum):
    EXTRACT = "EXTRACT"
    ATTRIBUTE_MERGE = "ATTRIBUTE_MERGE"
    VALUE_MERGE = "VALUE_MERGE"
    CONTRAST = "CONTRAST"
    USEFULNESS = "USEFULNESS"
    CRITIQUE = "CRITIQUE"
    REVISE = "REVISE"
    AUTORATE = "AUTORATE"


@dataclass(frozen=True)
class CompletionRequest:
    stage_tag: StageTag
    prompt: str
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")
        if self.stage_tag is StageTag.AUTORATE and self.temperature != 0.0:
            raise ValueError("AUTORATE requests must use temperature 0")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    latency_ms: int
    backend_id: str
