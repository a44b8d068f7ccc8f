"""Domain types shared by every stage, their JSON codec, and summary validation.

All types are frozen dataclasses holding tuples, so instances can be shared
between threads freely.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import typing
from dataclasses import dataclass
from typing import Any, Iterable

from .text import contains_verbatim, digest, fold_key


@dataclass(frozen=True)
class Entity:
    id: str
    display_name: str
    aliases: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.display_name.strip():
            raise ValueError("entity display_name must be non-empty")
        if not self.id:
            raise ValueError("entity id must be non-empty")

    @property
    def names(self) -> tuple[str, ...]:
        """Display name followed by aliases, without duplicates."""
        seen = dict.fromkeys([self.display_name, *self.aliases])
        return tuple(seen)


@dataclass(frozen=True)
class Sentence:
    text: str
    doc_url: str
    char_offset: int
    token_count: int


@dataclass(frozen=True)
class SourceDocument:
    url: str
    entity_id: str
    search_rank: int
    raw_text: str
    essential_sentences: tuple[Sentence, ...] = ()

    def __post_init__(self):
        if not self.url:
            raise ValueError("document url must be non-empty")
        if self.search_rank < 1:
            raise ValueError(f"search_rank must be >= 1, got {self.search_rank}")


@dataclass(frozen=True)
class TokenBudget:
    context_window: int = 8192
    prompt_reserve: int = 1024

    def __post_init__(self):
        if self.context_window <= 0 or self.prompt_reserve <= 0:
            raise ValueError("context_window and prompt_reserve must be positive")
        if self.effective <= 0:
            raise ValueError(
                f"effective budget must be positive "
                f"(context_window={self.context_window}, prompt_reserve={self.prompt_reserve})"
            )

    @property
    def effective(self) -> int:
        return self.context_window - self.prompt_reserve


@dataclass(frozen=True)
class Tile:
    id: str
    entity_id: str
    sentences: tuple[Sentence, ...]
    token_total: int


@dataclass(frozen=True)
class Extraction:
    attribute: str
    value: str
    evidence: str
    source_url: str
    entity_id: str
    tile_id: str

    def __post_init__(self):
        if not self.attribute.strip() or not self.value.strip():
            raise ValueError("attribute and value must be non-empty")
        if not contains_verbatim(self.evidence, self.value):
            raise ValueError(f"value {self.value!r} is not a substring of its evidence")

    @property
    def id(self) -> str:
        return digest(
            [self.attribute, self.value, self.evidence, self.source_url, self.entity_id, self.tile_id],
            12,
        )


@dataclass(frozen=True)
class AttributeCluster:
    canonical_attribute: str
    member_attributes: tuple[str, ...]
    values_a: tuple[Extraction, ...] = ()
    values_b: tuple[Extraction, ...] = ()

    def __post_init__(self):
        if not self.member_attributes:
            raise ValueError("cluster must have at least one member attribute")
        keys = [fold_key(m) for m in self.member_attributes]
        if len(set(keys)) != len(keys):
            raise ValueError(f"member attributes are not distinct: {self.member_attributes}")
        if fold_key(self.canonical_attribute) not in keys:
            raise ValueError("canonical attribute must be one of the member attributes")


class ContrastLevel(str, enum.Enum):
    HIGH = "HIGH"
    LOW = "LOW"
    NONE = "NONE"

    @property
    def score(self) -> float:
        return {"HIGH": 1.0, "LOW": 0.5, "NONE": 0.0}[self.value]


@dataclass(frozen=True)
class CellValue:
    """One shown value for one entity, with the sources backing it.

    ``evidence[i]`` is the verbatim span taken from ``source_urls[i]``.
    """

    value: str
    source_urls: tuple[str, ...]
    support_count: int
    evidence: tuple[str, ...]


@dataclass(frozen=True)
class MergedCluster:
    """An attribute cluster after value merging: the kept value groups per entity."""

    cluster: AttributeCluster
    cells_a: tuple[CellValue, ...]
    cells_b: tuple[CellValue, ...]


@dataclass(frozen=True)
class ComparisonRow:
    attribute: str
    cell_a: tuple[CellValue, ...]
    cell_b: tuple[CellValue, ...]
    contrast_level: ContrastLevel
    importance: float = 0.0
    rank_score: float = 0.0

    @property
    def support(self) -> int:
        return sum(c.support_count for c in self.cell_a) + sum(c.support_count for c in self.cell_b)

    def cell(self, side: str) -> tuple[CellValue, ...]:
        return self.cell_a if side == "A" else self.cell_b


def row_sort_key(row: ComparisonRow):
    return (-row.rank_score, -row.support, row.attribute)


@dataclass(frozen=True)
class RunMetadata:
    backend_id: str
    config_hash: str
    duration_ms: int = 0
    trace_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class ComparisonSummary:
    entity_a: Entity
    entity_b: Entity
    rows: tuple[ComparisonRow, ...]
    run_metadata: RunMetadata


@dataclass(frozen=True)
class Violation:
    code: str
    location: str
    message: str


# ---------------------------------------------------------------------------
# JSON codec
# ---------------------------------------------------------------------------

def to_data(obj: Any) -> Any:
    """Encode a domain value as plain JSON-compatible data (field order preserved)."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_data(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [to_data(v) for v in obj]
    if isinstance(obj, dict):
        return {k: to_data(v) for k, v in obj.items()}
    return obj


def from_data(tp: Any, data: Any) -> Any:
    """Decode plain data produced by :func:`to_data` back into ``tp``."""
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        hints = typing.get_type_hints(tp)
        kwargs = {}
        for f in dataclasses.fields(tp):
            if f.name in data:
                kwargs[f.name] = from_data(hints[f.name], data[f.name])
        return tp(**kwargs)
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        return tp(data)
    if origin is tuple:
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(from_data(args[0], v) for v in data)
        return tuple(from_data(a, v) for a, v in zip(args, data))
    if origin is list:
        (arg,) = typing.get_args(tp)
        return [from_data(arg, v) for v in data]
    if origin is dict:
        _, val = typing.get_args(tp)
        return {k: from_data(val, v) for k, v in data.items()}
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return None if data is None else from_data(args[0], data)
    if tp is float and isinstance(data, int):
        return float(data)
    return data


def dumps(obj: Any, *, indent: int | None = 2) -> str:
    return json.dumps(to_data(obj), ensure_ascii=False, indent=indent)


def loads(tp: Any, text: str) -> Any:
    return from_data(tp, json.loads(text))


def summary_to_json(summary: ComparisonSummary, *, stable: bool = True) -> str:
    """Canonical JSON for a summary.

    With ``stable`` the wall-clock duration is zeroed so that identical runs
    produce byte-identical files.
    """
    if stable:
        summary = dataclasses.replace(
            summary, run_metadata=dataclasses.replace(summary.run_metadata, duration_ms=0)
        )
    return dumps(summary) + "\n"


def summary_from_json(text: str) -> ComparisonSummary:
    return loads(ComparisonSummary, text)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_summary(summary: ComparisonSummary, corpus: Iterable[SourceDocument]) -> list[Violation]:
    """Check every summary invariant, including extractiveness against ``corpus``.

    Returns an empty list when the summary is valid.
    """
    docs: dict[tuple[str, str], SourceDocument] = {(d.entity_id, d.url): d for d in corpus}
    out: list[Violation] = []

    if summary.entity_a.id == summary.entity_b.id:
        out.append(Violation("entity", "entities", "entity ids must differ"))

    seen: dict[str, int] = {}
    for i, row in enumerate(summary.rows):
        where = f"rows[{i}]"
        key = fold_key(row.attribute)
        if key in seen:
            out.append(Violation("duplicate_attribute", where,
                                 f"attribute {row.attribute!r} already shown in rows[{seen[key]}]"))
        else:
            seen[key] = i
        if not row.cell_a and not row.cell_b:
            out.append(Violation("empty_row", where, "both cells are empty"))
        if row.importance < 0 or row.rank_score < 0:
            out.append(Violation("negative_score", where, "importance and rank_score must be >= 0"))
        for side, entity in (("A", summary.entity_a), ("B", summary.entity_b)):
            for j, cell in enumerate(row.cell(side)):
                out.extend(_check_cell(cell, entity, docs, f"{where}.cell_{side.lower()}[{j}]"))

    keys = [row_sort_key(r) for r in summary.rows]
    for i in range(1, len(keys)):
        if keys[i] < keys[i - 1]:
            out.append(Violation("rank_order", f"rows[{i}]", "rows are not in rank order"))
    return out


def _check_cell(cell: CellValue, entity: Entity, docs, where: str) -> list[Violation]:
    out = []
    if not cell.value.strip():
        out.append(Violation("empty_value", where, "value is empty"))
    if cell.support_count < 1:
        out.append(Violation("support", where, f"support_count {cell.support_count} < 1"))
    if not cell.source_urls:
        out.append(Violation("missing_source", where, "value carries no source URL"))
    if len(cell.evidence) != len(cell.source_urls):
        out.append(Violation("evidence_shape", where, "evidence and source_urls differ in length"))
        return out
    for url, ev in zip(cell.source_urls, cell.evidence):
        doc = docs.get((entity.id, url))
        if doc is None:
            out.append(Violation("unknown_source", where, f"{url} is not a document of {entity.id}"))
        elif not contains_verbatim(doc.raw_text, ev):
            out.append(Violation("extractiveness", where, f"evidence not found verbatim in {url}"))
    if cell.evidence and not any(contains_verbatim(ev, cell.value) for ev in cell.evidence):
        out.append(Violation("value_not_in_evidence", where, f"{cell.value!r} not in any evidence span"))
    return out
