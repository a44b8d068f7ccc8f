"""Export post-revision stage outputs as a training mixture for a smaller model."""

from __future__ import annotations

import enum
import json
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import CompareError
from .gateway import StageTag
from .gateway.grammar import parse_compare, parse_stage_output

EXAMPLES_FILE = "examples.jsonl"
MANIFEST_FILE = "manifest.json"


class ExportError(CompareError):
    pass


class ExportWarning(UserWarning):
    pass


class TaskTag(str, enum.Enum):
    EXTRACT = "EXTRACT"
    ATTRIBUTE_MERGE = "ATTRIBUTE_MERGE"
    COMPARE = "COMPARE"


@dataclass(frozen=True)
class TrainingExample:
    task_tag: TaskTag
    input_text: str
    target_text: str
    run_id: str
    trace_digest: str

    @property
    def provenance(self) -> str:
        return f"{self.run_id}#{self.trace_digest}"

    def to_json(self) -> dict:
        return {
            "task_tag": self.task_tag.value,
            "input_text": self.input_text,
            "target_text": self.target_text,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "TrainingExample":
        try:
            run_id, _, trace = str(data["provenance"]).rpartition("#")
            return cls(TaskTag(data["task_tag"]), str(data["input_text"]), str(data["target_text"]), run_id, trace)
        except (KeyError, ValueError, TypeError) as exc:
            raise ExportError(f"malformed training example: {exc}") from exc


def validate_target(ex: TrainingExample) -> None:
    """Raise ParseError unless the target parses under its task's output grammar."""
    if ex.task_tag is TaskTag.COMPARE:
        parse_compare(ex.target_text)
    else:
        parse_stage_output(StageTag(ex.task_tag.value), ex.target_text)


@dataclass(frozen=True)
class TaskMix:
    ratios: Mapping[TaskTag, float] = field(default_factory=lambda: {
        TaskTag.EXTRACT: 30, TaskTag.ATTRIBUTE_MERGE: 1, TaskTag.COMPARE: 30,
    })

    def __post_init__(self):
        if not self.ratios:
            raise ValueError("task mix needs at least one task")
        for tag, w in self.ratios.items():
            TaskTag(tag)
            if not w > 0:
                raise ValueError(f"weight for {tag} must be positive, got {w}")

    @classmethod
    def parse(cls, text: str) -> "TaskMix":
        """Parse ``"30:1:30"`` (EXTRACT:ATTRIBUTE_MERGE:COMPARE)."""
        parts = text.split(":")
        if len(parts) != len(TaskTag):
            raise ValueError(f"expected {len(TaskTag)} colon-separated weights, got {text!r}")
        return cls({tag: float(p) for tag, p in zip(TaskTag, parts)})


def apportion(total: int, weights: Mapping[TaskTag, float]) -> dict[TaskTag, int]:
    """Largest-remainder apportionment of ``total`` over ``weights``; ties go to the earlier task."""
    if total < 0:
        raise ValueError("target count must be >= 0")
    tags = [t for t in TaskTag if t in weights]
    wsum = sum(weights[t] for t in tags)
    quotas = {t: total * weights[t] / wsum for t in tags}
    counts = {t: int(quotas[t]) for t in tags}
    left = total - sum(counts.values())
    by_remainder = sorted(tags, key=lambda t: (-(quotas[t] - counts[t]), tags.index(t)))
    for t in by_remainder[:left]:
        counts[t] += 1
    return counts


@dataclass(frozen=True)
class RunArtifact:
    run_id: str
    cr_enabled: bool
    examples: tuple[TrainingExample, ...]


def load_run(run_dir: str | Path) -> RunArtifact:
    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / MANIFEST_FILE).read_text(encoding="utf-8"))
        lines = (run_dir / EXAMPLES_FILE).read_text(encoding="utf-8").splitlines()
    except (OSError, json.JSONDecodeError) as exc:
        raise ExportError(f"unreadable run directory {run_dir}: {exc}") from exc
    examples = tuple(TrainingExample.from_json(json.loads(line)) for line in lines if line.strip())
    return RunArtifact(str(manifest.get("run_id", run_dir.name)), bool(manifest.get("cr_enabled")), examples)


def load_runs(root: str | Path) -> list[RunArtifact]:
    root = Path(root)
    if not root.is_dir():
        return []
    return [load_run(d) for d in sorted(root.iterdir()) if (d / MANIFEST_FILE).is_file()]


def export_training_mix(runs: Sequence[RunArtifact], mix: TaskMix | None = None, target_count: int = 0,
                        *, seed: int = 0) -> list[TrainingExample]:
    """Sample ``target_count`` examples across tasks in the mix ratios, without replacement."""
    mix = mix or TaskMix()
    quota = apportion(target_count, mix.ratios)
    pools: dict[TaskTag, list[TrainingExample]] = {t: [] for t in quota}
    seen = set()
    for run in sorted(runs, key=lambda r: r.run_id):
        if not run.cr_enabled:
            warnings.warn(f"run {run.run_id} was produced without critique-and-revision; skipped",
                          ExportWarning, stacklevel=2)
            continue
        for ex in run.examples:
            if ex.task_tag not in pools:
                continue
            key = (ex.task_tag, ex.input_text, ex.target_text)
            if key in seen:
                continue
            seen.add(key)
            validate_target(ex)
            pools[ex.task_tag].append(ex)

    rng = random.Random(seed)
    out: list[TrainingExample] = []
    for tag, want in quota.items():
        pool = sorted(pools[tag], key=lambda e: (e.run_id, e.trace_digest))
        if len(pool) < want:
            warnings.warn(f"only {len(pool)} {tag.value} examples available, {want} requested",
                          ExportWarning, stacklevel=2)
        out += rng.sample(pool, min(want, len(pool)))
    return out


def write_jsonl(path: str | Path, examples: Iterable[TrainingExample]) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> list[TrainingExample]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [TrainingExample.from_json(json.loads(line)) for line in lines if line.strip()]
