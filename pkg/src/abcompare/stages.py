"""The LM stages: extract, attribute merge, value merge, contrast, usefulness; plus row ranking."""

from __future__ import annotations

import logging
import threading
import time
from collections import OrderedDict, defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .config import PipelineConfig
from .errors import GatewayError, ParseError
from .gateway import Gateway, StageTag
from .gateway.grammar import AttributeGroup, StructuredExtractionList
from .ingest import SourceIndex
from .lexicon import Lexicon, default_lexicon
from .model import (
    AttributeCluster,
    CellValue,
    ComparisonRow,
    ContrastLevel,
    Entity,
    Extraction,
    MergedCluster,
    Tile,
    row_sort_key,
)
from .payloads import (
    attribute_merge_payload,
    contrast_payload,
    extract_payload,
    usefulness_payload,
    value_merge_payload,
)
from .text import contains_verbatim, digest, fold_key

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StageTrace:
    stage_tag: str
    input_digest: str
    output_digest: str
    critiques_applied: tuple[str, ...] = ()
    duration_ms: int = 0
    note: str = ""

    @property
    def id(self) -> str:
        return digest([self.stage_tag, self.input_digest, self.output_digest])

    def sort_key(self):
        return (self.stage_tag, self.note, self.input_digest, self.output_digest)


@dataclass
class RunContext:
    """Per-run state shared by the stages: gateway, config, corpus lookups and logs."""

    gateway: Gateway
    config: PipelineConfig
    sources: SourceIndex
    lexicon: Lexicon = field(default_factory=default_lexicon)
    traces: list[StageTrace] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    removed: list[dict] = field(default_factory=list)
    cr_log: list[dict] = field(default_factory=list)
    stage_seconds: dict[str, float] = field(default_factory=lambda: defaultdict(float))
    entity_a: Entity | None = None
    entity_b: Entity | None = None

    def __post_init__(self):
        self._lock = threading.Lock()

    def warn(self, message: str) -> None:
        log.warning(message)
        with self._lock:
            self.warnings.append(message)

    def add_trace(self, trace: StageTrace) -> None:
        with self._lock:
            self.traces.append(trace)

    def call(self, stage: StageTag, payload: str, *, note: str = "", critiques: Sequence[str] = ()) -> Any:
        start = time.perf_counter()
        value, raw = self.gateway.call(stage, payload)
        ms = int((time.perf_counter() - start) * 1000)
        self.add_trace(StageTrace(stage.value, digest(payload), digest(raw), tuple(critiques), ms, note))
        return value

    @contextmanager
    def timed(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            with self._lock:
                self.stage_seconds[name] += time.perf_counter() - start

    def sorted_traces(self) -> list[StageTrace]:
        return sorted(self.traces, key=StageTrace.sort_key)


# ---------------------------------------------------------------------------
# LM-Extract
# ---------------------------------------------------------------------------

def _bind_extraction(ctx: RunContext, entity: Entity, tile: Tile, attribute: str, value: str,
                     evidence: str) -> Extraction | None:
    url = next((s.doc_url for s in tile.sentences if contains_verbatim(s.text, evidence)), None)
    if url is None:
        url = next((d.url for d in ctx.sources.docs_for(entity.id)
                    if d.url in {s.doc_url for s in tile.sentences} and contains_verbatim(d.raw_text, evidence)),
                   None)
    if url is None or not ctx.sources.is_extractive(entity.id, url, evidence):
        ctx.warn(f"tile {tile.id}: evidence not found verbatim in its documents; dropped")
        return None
    try:
        return Extraction(attribute.strip(), value.strip(), evidence, url, entity.id, tile.id)
    except ValueError as exc:
        ctx.warn(f"tile {tile.id}: invalid extraction dropped ({exc})")
        return None


def _extract_tile_strict(ctx: RunContext, entity: Entity, tile: Tile) -> list[Extraction]:
    out: StructuredExtractionList = ctx.call(StageTag.EXTRACT, extract_payload(entity, tile), note=tile.id)
    found = []
    for item in out.items:
        x = _bind_extraction(ctx, entity, tile, item.attribute, item.value, item.evidence)
        if x is not None:
            found.append(x)
    return found


def extract_tile(ctx: RunContext, entity: Entity, tile: Tile) -> list[Extraction]:
    try:
        return _extract_tile_strict(ctx, entity, tile)
    except (GatewayError, ParseError) as exc:
        ctx.warn(f"tile {tile.id} skipped: {exc}")
        return []


def lm_extract(ctx: RunContext, entity: Entity, tiles: Sequence[Tile]) -> list[Extraction]:
    """Extractions in tile order, then in-tile order.

    Failed tiles are skipped with a warning; if every tile fails at the
    gateway the backend is considered down and the error propagates.
    """
    for t in tiles:
        if t.entity_id != entity.id:
            raise ValueError(f"tile {t.id} belongs to {t.entity_id!r}, not {entity.id!r}")
    failures: list[GatewayError] = []

    def one(t: Tile) -> list[Extraction]:
        try:
            return _extract_tile_strict(ctx, entity, t)
        except (GatewayError, ParseError) as exc:
            if isinstance(exc, GatewayError):
                failures.append(exc)
            ctx.warn(f"tile {t.id} skipped: {exc}")
            return []

    per_tile = ctx.gateway.map(one, tiles)
    if tiles and len(failures) == len(tiles):
        raise failures[0]
    return [x for xs in per_tile for x in xs]


# ---------------------------------------------------------------------------
# LM-Attribute-Merge
# ---------------------------------------------------------------------------

def center_of(members: Iterable[str]) -> str:
    return min(members, key=lambda s: (len(s), s))


def _batches(ctx: RunContext, stage: StageTag, items: Sequence, render) -> list[list]:
    """Split ``items`` into consecutive batches whose payload fits the context window."""
    out: list[list] = []
    current: list = []
    for item in items:
        trial = current + [item]
        if current and not ctx.gateway.fits(stage, render(trial)):
            out.append(current)
            current = [item]
        else:
            current = trial
    if current:
        out.append(current)
    return out


def _merge_call(ctx: RunContext, attributes: list[str]) -> list[list[str]]:
    """One ATTRIBUTE_MERGE call; returns member lists covering ``attributes`` exactly once."""
    groups: tuple[AttributeGroup, ...] = ctx.call(StageTag.ATTRIBUTE_MERGE, attribute_merge_payload(attributes))
    known = {fold_key(a): a for a in attributes}
    assigned: set[str] = set()
    result = []
    for g in groups:
        members = []
        for m in g.members:
            k = fold_key(m)
            if k in known and k not in assigned:
                assigned.add(k)
                members.append(known[k])
        if members:
            result.append(members)
    missing = [a for a in attributes if fold_key(a) not in assigned]
    if missing:
        ctx.warn(f"attribute merge left {len(missing)} attribute(s) unassigned; kept as singletons")
        result += [[a] for a in missing]
    return result


def group_attributes(ctx: RunContext, attributes: list[str]) -> list[list[str]]:
    if not attributes:
        return []
    batches = _batches(ctx, StageTag.ATTRIBUTE_MERGE, attributes, attribute_merge_payload)
    if len(batches) == 1:
        return _merge_call(ctx, attributes)
    # merge within batches, then merge the batch centers and union the groups they stand for
    groups = [g for b in batches for g in _merge_call(ctx, b)]
    centers = [center_of(g) for g in groups]
    by_center = {fold_key(c): g for c, g in zip(centers, groups)}
    if len(groups) == len(attributes):
        return groups
    merged = group_attributes(ctx, centers)
    return [[m for c in cg for m in by_center[fold_key(c)]] for cg in merged]


def lm_attribute_merge(ctx: RunContext, ex_a: Sequence[Extraction], ex_b: Sequence[Extraction]) -> list[AttributeCluster]:
    """Cluster the attributes of both sides; clusters follow first appearance (A then B)."""
    attributes = list(OrderedDict((fold_key(x.attribute), x.attribute) for x in [*ex_a, *ex_b]).values())
    clusters = build_clusters(group_attributes(ctx, attributes), ex_a, ex_b)
    order = {fold_key(a): i for i, a in enumerate(attributes)}
    clusters.sort(key=lambda c: min(order[fold_key(m)] for m in c.member_attributes))
    return clusters


def build_clusters(groups: Sequence[Sequence[str]], ex_a: Sequence[Extraction],
                   ex_b: Sequence[Extraction]) -> list[AttributeCluster]:
    out = []
    for members in groups:
        keys = {fold_key(m) for m in members}
        out.append(AttributeCluster(
            center_of(members), tuple(members),
            tuple(x for x in ex_a if fold_key(x.attribute) in keys),
            tuple(x for x in ex_b if fold_key(x.attribute) in keys),
        ))
    return out


# ---------------------------------------------------------------------------
# LM-Value-Merge
# ---------------------------------------------------------------------------

def make_cell(center: str, members: Sequence[Extraction]) -> CellValue:
    """Cell for a kept value group: every source URL once, with evidence containing the value when possible."""
    value = center if any(contains_verbatim(x.evidence, center) for x in members) else members[0].value
    evidence: OrderedDict[str, str] = OrderedDict()
    for x in members:
        if x.source_url not in evidence or (
            not contains_verbatim(evidence[x.source_url], value) and contains_verbatim(x.evidence, value)
        ):
            evidence[x.source_url] = x.evidence
    return CellValue(value, tuple(evidence), len(members), tuple(evidence.values()))


def lm_value_merge(ctx: RunContext, cluster: AttributeCluster) -> MergedCluster:
    groups = ctx.call(StageTag.VALUE_MERGE, value_merge_payload(cluster, ctx.config.majority_threshold),
                      note=cluster.canonical_attribute)
    sides = {"A": cluster.values_a, "B": cluster.values_b}
    used: dict[str, set[int]] = {"A": set(), "B": set()}
    cells: dict[str, list[CellValue]] = {"A": [], "B": []}
    for g in groups:
        pool = sides[g.side]
        idx = [i for i in g.indices if 0 <= i < len(pool) and i not in used[g.side]]
        if not idx:
            continue
        used[g.side].update(idx)
        cells[g.side].append(make_cell(g.center, [pool[i] for i in idx]))
    return MergedCluster(cluster, tuple(cells["A"]), tuple(cells["B"]))


def value_merge_all(ctx: RunContext, clusters: Sequence[AttributeCluster]) -> list[MergedCluster]:
    return ctx.gateway.map(lambda c: lm_value_merge(ctx, c), clusters)


# ---------------------------------------------------------------------------
# LM-Contrast and ranking
# ---------------------------------------------------------------------------

def _contrast_items(merged: Sequence[MergedCluster]):
    return [(m.cluster.canonical_attribute, m.cells_a, m.cells_b) for m in merged]


def lm_contrast(ctx: RunContext, merged: Sequence[MergedCluster]) -> list[ComparisonRow]:
    """Label contrast for every non-empty cluster and rank the resulting rows."""
    merged = [m for m in merged if m.cells_a or m.cells_b]
    if not merged:
        return []
    levels: dict[str, ContrastLevel] = {}
    batches = _batches(ctx, StageTag.CONTRAST, merged, lambda ms: contrast_payload(_contrast_items(ms)))
    for batch in batches:
        hints = ctx.call(StageTag.CONTRAST, contrast_payload(_contrast_items(batch)))
        for h in hints:
            levels.setdefault(fold_key(h.attribute), ContrastLevel(h.level))
        missing = [m.cluster.canonical_attribute for m in batch
                   if fold_key(m.cluster.canonical_attribute) not in levels]
        if missing:
            raise ParseError(StageTag.CONTRAST.value, "", f"no contrast label for {missing}")
    rows = [
        ComparisonRow(m.cluster.canonical_attribute, m.cells_a, m.cells_b,
                      levels[fold_key(m.cluster.canonical_attribute)])
        for m in merged
    ]
    return rank_rows(ctx, rows)


def row_importance(ctx: RunContext, row: ComparisonRow, entity_a: str, entity_b: str) -> float:
    """Sum of 1/search_rank over the distinct documents supporting the row."""
    docs = {(entity_a, u) for c in row.cell_a for u in c.source_urls}
    docs |= {(entity_b, u) for c in row.cell_b for u in c.source_urls}
    return sum(1.0 / ctx.sources.rank(e, u) for e, u in sorted(docs))


def rank_rows(ctx: RunContext, rows: Sequence[ComparisonRow]) -> list[ComparisonRow]:
    """Score rows by contrast and normalized popularity, then sort them into final order."""
    if not rows:
        return []
    entity_a, entity_b = ctx.entity_a.id, ctx.entity_b.id
    wc, wp = ctx.config.rank_weights
    imp = [row_importance(ctx, r, entity_a, entity_b) for r in rows]
    top = max(imp)
    out = []
    for r, i in zip(rows, imp):
        norm = i / top if top > 0 else 0.0
        out.append(ComparisonRow(r.attribute, r.cell_a, r.cell_b, r.contrast_level,
                                 importance=i, rank_score=wc * r.contrast_level.score + wp * norm))
    out.sort(key=row_sort_key)
    return out


# ---------------------------------------------------------------------------
# LM-Usefulness
# ---------------------------------------------------------------------------

def lm_usefulness(ctx: RunContext, rows: Sequence[ComparisonRow]) -> list[ComparisonRow]:
    """Order-preserving filter; removed rows are logged in ``ctx.removed``."""
    entity_a, entity_b = ctx.entity_a, ctx.entity_b
    labels = ctx.gateway.map(
        lambda r: ctx.call(StageTag.USEFULNESS, usefulness_payload(entity_a, entity_b, r), note=r.attribute),
        rows,
    )
    kept = []
    for row, label in zip(rows, labels):
        if label == "YES":
            kept.append(row)
        else:
            ctx.removed.append({"stage": "USEFULNESS", "attribute": row.attribute,
                                "reason": "rated not useful"})
    return kept
