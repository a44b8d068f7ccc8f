"""Run directories: everything a run produced, written so it can be re-evaluated on its own."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .config import AppConfig, config_to_ini
from .distill import EXAMPLES_FILE, MANIFEST_FILE, TaskTag, TrainingExample, write_jsonl
from .evaluation import EvalInputError, EvalReport
from .ingest import Manifest, parse_manifest
from .model import ComparisonSummary, dumps, summary_from_json, summary_to_json, to_data
from .pipeline import RunResult, summary_to_markdown

SUMMARY_FILE = "summary.json"
SUMMARY_MD_FILE = "summary.md"
TRACES_FILE = "traces.jsonl"
CR_LOG_FILE = "cr_log.jsonl"
CORPUS_FILE = "corpus.json"
EVAL_FILE = "eval_report.json"


def _jsonl(path: Path, records) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")


def training_examples(result: RunResult) -> list[TrainingExample]:
    return [
        TrainingExample(TaskTag(c.task_tag), c.input_text, c.target_text, result.run_id, c.trace_digest)
        for c in result.candidates
    ]


def write_run(result: RunResult, out_root: str | Path, app: AppConfig, *, duration_ms: int,
              eval_report: EvalReport | None = None) -> Path:
    """Write ``runs/<run_id>/`` and return its path."""
    run_dir = Path(out_root) / result.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / SUMMARY_FILE).write_text(summary_to_json(result.summary), encoding="utf-8")
    (run_dir / SUMMARY_MD_FILE).write_text(summary_to_markdown(result.summary), encoding="utf-8")
    _jsonl(run_dir / TRACES_FILE, (to_data(t) | {"id": t.id} for t in result.traces))
    _jsonl(run_dir / CR_LOG_FILE, result.cr_log)
    write_jsonl(run_dir / EXAMPLES_FILE, training_examples(result))
    (run_dir / CORPUS_FILE).write_text(
        json.dumps(result.manifest.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    artifacts = {
        "summary": SUMMARY_FILE,
        "summary_markdown": SUMMARY_MD_FILE,
        "traces": TRACES_FILE,
        "cr_log": CR_LOG_FILE,
        "training_examples": EXAMPLES_FILE,
        "corpus": CORPUS_FILE,
    }
    if eval_report is not None:
        (run_dir / EVAL_FILE).write_text(dumps(eval_report) + "\n", encoding="utf-8")
        artifacts["eval_report"] = EVAL_FILE
    manifest = {
        "run_id": result.run_id,
        "entity_a": result.summary.entity_a.id,
        "entity_b": result.summary.entity_b.id,
        "cr_enabled": result.cr_enabled,
        "backend_id": result.summary.run_metadata.backend_id,
        "config_hash": result.summary.run_metadata.config_hash,
        "config": config_to_ini(app),
        "corpus_digest": result.manifest.digest,
        "artifacts": artifacts,
        "duration_ms": duration_ms,
        "stage_seconds": dict(sorted(result.stage_seconds.items())),
        "warnings": sorted(set(result.context.warnings)),
    }
    (run_dir / MANIFEST_FILE).write_text(json.dumps(manifest, ensure_ascii=False, indent=2) + "\n",
                                         encoding="utf-8")
    return run_dir


@dataclass(frozen=True)
class LoadedRun:
    run_id: str
    summary: ComparisonSummary
    corpus: Manifest | None
    manifest: dict


def load_run_dir(run_dir: str | Path) -> LoadedRun:
    """Summary, corpus snapshot and manifest of a run directory (or a bare summary.json path)."""
    path = Path(run_dir)
    summary_path = path if path.is_file() else path / SUMMARY_FILE
    base = summary_path.parent
    try:
        summary = summary_from_json(summary_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise EvalInputError(f"summary artifact not found: {summary_path}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise EvalInputError(f"summary artifact {summary_path} is malformed: {exc}") from exc
    manifest = {}
    if (base / MANIFEST_FILE).is_file():
        manifest = json.loads((base / MANIFEST_FILE).read_text(encoding="utf-8"))
    corpus = None
    if (base / CORPUS_FILE).is_file():
        corpus = parse_manifest(json.loads((base / CORPUS_FILE).read_text(encoding="utf-8")))
    return LoadedRun(str(manifest.get("run_id", base.name)), summary, corpus, manifest)
