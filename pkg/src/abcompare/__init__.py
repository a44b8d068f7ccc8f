"""Attributed comparative summaries of two entities from web documents."""

from __future__ import annotations

from .config import AppConfig, PipelineConfig, load_config
from .errors import CompareError, ConfigError, CorpusError, GatewayError, ParseError, StageError
from .model import ComparisonRow, ComparisonSummary, Entity, summary_from_json, summary_to_json
from .pipeline import run_pipeline, run_pipeline_detailed

__version__ = "0.1.0"

__all__ = [
    "AppConfig", "PipelineConfig", "load_config",
    "CompareError", "ConfigError", "CorpusError", "GatewayError", "ParseError", "StageError",
    "ComparisonRow", "ComparisonSummary", "Entity", "summary_from_json", "summary_to_json",
    "run_pipeline", "run_pipeline_detailed",
]
