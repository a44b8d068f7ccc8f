"""Critique-and-revision: eight defect kinds, detect-then-revise passes and the bounded refine loop."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Sequence, Union

from .gateway import StageTag
from .gateway.grammar import CellRecord, CritiqueRecord, RevisePatch, record
from .model import (
    AttributeCluster,
    CellValue,
    ComparisonRow,
    Entity,
    Extraction,
    MergedCluster,
)
from .payloads import entity_lines, extraction_line, pool_lines, row_lines
from .stages import RunContext, build_clusters, lm_contrast, lm_value_merge, rank_rows
from .text import contains_verbatim, digest, fold_key


class Scope(str, enum.Enum):
    EXTRACT = "EXTRACT"
    COMPARE = "COMPARE"


class CritiqueKind(str, enum.Enum):
    INSUFFICIENT_CONTEXT = "INSUFFICIENT_CONTEXT"
    WRONG_ENTITY = "WRONG_ENTITY"
    UNHELPFUL_ATTRIBUTE_EXTRACT = "UNHELPFUL_ATTRIBUTE_EXTRACT"
    ORTHOGONAL_VALUES = "ORTHOGONAL_VALUES"
    INCONSISTENT_VALUES = "INCONSISTENT_VALUES"
    UNHELPFUL_ATTRIBUTE_OR_VALUE = "UNHELPFUL_ATTRIBUTE_OR_VALUE"
    UNDER_OR_OVER_MERGED = "UNDER_OR_OVER_MERGED"
    LONG_COMPLEX_CLAIM = "LONG_COMPLEX_CLAIM"

    @property
    def scope(self) -> Scope:
        return Scope.EXTRACT if self in _EXTRACT_KINDS else Scope.COMPARE

    @property
    def order(self) -> int:
        return list(CritiqueKind).index(self)


_EXTRACT_KINDS = {
    CritiqueKind.INSUFFICIENT_CONTEXT, CritiqueKind.WRONG_ENTITY, CritiqueKind.UNHELPFUL_ATTRIBUTE_EXTRACT,
}


@dataclass(frozen=True)
class ExtractState:
    """Extraction-stage payload for one entity."""

    entity: Entity
    other: Entity
    extractions: tuple[Extraction, ...]


@dataclass(frozen=True)
class CompareState:
    """Comparison-stage payload: rows plus the pre-merge clusters they were built from."""

    entity_a: Entity
    entity_b: Entity
    rows: tuple[ComparisonRow, ...]
    pools: tuple[AttributeCluster, ...]

    def pool_for(self, attribute: str) -> AttributeCluster | None:
        k = fold_key(attribute)
        return next((p for p in self.pools if fold_key(p.canonical_attribute) == k), None)


Payload = Union[ExtractState, CompareState]


@dataclass(frozen=True)
class Critique:
    kind: CritiqueKind
    target: str  # extraction id (extraction scope) or row attribute (comparison scope)
    note: str

    @property
    def key(self) -> tuple[str, str]:
        return (self.kind.value, fold_key(self.target))


@dataclass(frozen=True)
class RevisionResult:
    payload: Payload
    applied: tuple[Critique, ...]
    iterations_used: int


def scope_of(payload: Payload) -> Scope:
    return Scope.EXTRACT if isinstance(payload, ExtractState) else Scope.COMPARE


# ---------------------------------------------------------------------------
# payloads
# ---------------------------------------------------------------------------

def _extract_header(ctx: RunContext, s: ExtractState) -> list[str]:
    return entity_lines((("SELF", s.entity), ("OTHER", s.other)), ctx.sources.aliases)


def _compare_header(ctx: RunContext, s: CompareState) -> list[str]:
    return entity_lines((("A", s.entity_a), ("B", s.entity_b)), ctx.sources.aliases)


def _members(s: CompareState, row: ComparisonRow) -> tuple[str, ...]:
    pool = s.pool_for(row.attribute)
    return pool.member_attributes if pool else (row.attribute,)


def critique_payload(ctx: RunContext, payload: Payload) -> str:
    if isinstance(payload, ExtractState):
        lines = [record("SCOPE", "EXTRACT"), *_extract_header(ctx, payload)]
        lines += [extraction_line(x) for x in payload.extractions]
    else:
        lines = [record("SCOPE", "COMPARE"), *_compare_header(ctx, payload)]
        for row in payload.rows:
            lines += row_lines(row, _members(payload, row))
    return "\n".join(lines)


def _find_extraction(s: ExtractState, target: str) -> Extraction | None:
    return next((x for x in s.extractions if x.id == target), None)


def _find_row(s: CompareState, target: str) -> ComparisonRow | None:
    k = fold_key(target)
    return next((r for r in s.rows if fold_key(r.attribute) == k), None)


def _context_lines(ctx: RunContext, s: ExtractState, x: Extraction) -> list[str]:
    """Corpus sentences of the entity sharing a word with the attribute, best-ranked first."""
    words = set(ctx.lexicon.normalize_attribute(x.attribute).split())
    words |= set(ctx.lexicon.attribute_key(x.attribute).split())
    out = []
    for sent in ctx.sources.sentences(s.entity.id):
        if words & set(ctx.lexicon.normalize_attribute(sent.text).split()):
            out.append(record("CONTEXT", sent.doc_url, sent.text))
    return out


def revise_payload(ctx: RunContext, payload: Payload, c: Critique) -> str:
    lines = [record("KIND", c.kind.value), record("TARGET", c.target), record("NOTE", c.note)]
    if isinstance(payload, ExtractState):
        x = _find_extraction(payload, c.target)
        lines += _extract_header(ctx, payload)
        lines.append(extraction_line(x))
        if c.kind is CritiqueKind.INSUFFICIENT_CONTEXT:
            lines += _context_lines(ctx, payload, x)
        return "\n".join(lines)

    row = _find_row(payload, c.target)
    lines += _compare_header(ctx, payload)
    if c.kind is CritiqueKind.UNDER_OR_OVER_MERGED:
        others = [r for r in payload.rows if r is not row]
        for r in [row, *others]:
            lines += row_lines(r, _members(payload, r))
        return "\n".join(lines)
    lines += row_lines(row, _members(payload, row))
    if c.kind is CritiqueKind.ORTHOGONAL_VALUES:
        pool = payload.pool_for(row.attribute)
        if pool:
            lines += pool_lines(pool)
    if c.kind is CritiqueKind.INCONSISTENT_VALUES:
        for side, entity in (("A", payload.entity_a), ("B", payload.entity_b)):
            urls = dict.fromkeys(u for cell in row.cell(side) for u in cell.source_urls)
            lines += [record("DOC", side, u, ctx.sources.rank(entity.id, u)) for u in urls]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# critique
# ---------------------------------------------------------------------------

def critique(ctx: RunContext, payload: Payload) -> list[Critique]:
    """Detect defects in ``payload``; critiques come back in deterministic kind-then-payload order."""
    scope = scope_of(payload)
    if isinstance(payload, ExtractState):
        if not payload.extractions:
            return []
        order = {x.id: i for i, x in enumerate(payload.extractions)}
    else:
        if not payload.rows:
            return []
        order = {fold_key(r.attribute): i for i, r in enumerate(payload.rows)}
    records: tuple[CritiqueRecord, ...] = ctx.call(StageTag.CRITIQUE, critique_payload(ctx, payload),
                                                   note=scope.value)
    out: dict[tuple[str, str], Critique] = {}
    for r in records:
        kind = CritiqueKind(r.kind)
        if kind.scope is not scope:
            continue
        tkey = r.target if scope is Scope.EXTRACT else fold_key(r.target)
        if tkey not in order:
            ctx.warn(f"critique {kind.value} names unknown target {r.target!r}; ignored")
            continue
        c = Critique(kind, r.target, r.note)
        out.setdefault(c.key, c)

    def sort_key(c: Critique):
        tkey = c.target if scope is Scope.EXTRACT else fold_key(c.target)
        return (c.kind.order, order[tkey])

    return sorted(out.values(), key=sort_key)


# ---------------------------------------------------------------------------
# revise
# ---------------------------------------------------------------------------

class Rejected(Exception):
    """A revision that would break attribution; the critique is re-queued once."""


def _apply_extract(ctx: RunContext, s: ExtractState, c: Critique, patch: RevisePatch) -> tuple[ExtractState, str]:
    x = _find_extraction(s, c.target)
    if patch.delete:
        return dataclasses.replace(s, extractions=tuple(e for e in s.extractions if e is not x)), "deleted"
    if not patch.extractions:
        return s, "kept"
    new = []
    for e in patch.extractions:
        url = e.url if ctx.sources.is_extractive(s.entity.id, e.url, e.evidence) \
            else ctx.sources.locate(s.entity.id, e.evidence)
        if url is None or not contains_verbatim(e.evidence, e.value) or not e.value.strip():
            raise Rejected(f"revised extraction for {x.attribute!r} is not backed by the corpus")
        new.append(Extraction(e.attribute, e.value, e.evidence, url, s.entity.id, x.tile_id))
    exs = []
    for e in s.extractions:
        if e is x:
            exs += new
        else:
            exs.append(e)
    return dataclasses.replace(s, extractions=tuple(exs)), "revised"


def _cells_from_records(ctx: RunContext, s: CompareState, records: Sequence[CellRecord]) -> dict[str, tuple[CellValue, ...]]:
    out = {"A": [], "B": []}
    for r in records:
        entity = s.entity_a if r.side == "A" else s.entity_b
        for url, ev in zip(r.urls, r.evidence):
            if not ctx.sources.is_extractive(entity.id, url, ev):
                raise Rejected(f"evidence for {r.value!r} not found in {url}")
        if not any(contains_verbatim(ev, r.value) for ev in r.evidence):
            raise Rejected(f"value {r.value!r} is not inside its evidence")
        out[r.side].append(CellValue(r.value, r.urls, r.support, r.evidence))
    return {k: tuple(v) for k, v in out.items()}


def _recontrast(ctx: RunContext, s: CompareState, row: ComparisonRow,
                cells: dict[str, tuple[CellValue, ...]]) -> ComparisonRow | None:
    if not cells["A"] and not cells["B"]:
        return None
    pool = s.pool_for(row.attribute) or AttributeCluster(row.attribute, (row.attribute,))
    rows = lm_contrast(ctx, [MergedCluster(pool, cells["A"], cells["B"])])
    new = rows[0]
    return ComparisonRow(row.attribute, new.cell_a, new.cell_b, new.contrast_level)


def _regroup(ctx: RunContext, s: CompareState, row: ComparisonRow, patch: RevisePatch) -> CompareState:
    live = [s.pool_for(r.attribute) for r in s.rows]
    live = [p for p in live if p is not None]
    known = {fold_key(m): m for p in live for m in p.member_attributes}
    assigned: set[str] = set()
    groups = []
    for g in patch.groups:
        members = []
        for m in g.members:
            k = fold_key(m)
            if k in known and k not in assigned:
                assigned.add(k)
                members.append(known[k])
        if members:
            groups.append(members)
    for p in live:
        rest = [m for m in p.member_attributes if fold_key(m) not in assigned]
        if rest:
            groups.append(rest)
    ex_a = [x for p in live for x in p.values_a]
    ex_b = [x for p in live for x in p.values_b]
    new_pools = build_clusters(groups, ex_a, ex_b)

    old_by_members = {frozenset(fold_key(m) for m in p.member_attributes): p for p in live}
    rows_by_attr = {fold_key(r.attribute): r for r in s.rows}
    rows, changed = [], []
    for p in new_pools:
        old = old_by_members.get(frozenset(fold_key(m) for m in p.member_attributes))
        if old is not None and fold_key(old.canonical_attribute) in rows_by_attr:
            rows.append(rows_by_attr[fold_key(old.canonical_attribute)])
        else:
            changed.append(p)
    if changed:
        merged = [lm_value_merge(ctx, p) for p in changed]
        rows += lm_contrast(ctx, merged)
    live_keys = {fold_key(p.canonical_attribute) for p in live}
    kept_pools = [p for p in s.pools if fold_key(p.canonical_attribute) not in live_keys]
    new_keys = {fold_key(p.canonical_attribute) for p in new_pools}
    kept_pools = [p for p in kept_pools if fold_key(p.canonical_attribute) not in new_keys]
    return dataclasses.replace(s, rows=tuple(rows), pools=tuple(kept_pools + new_pools))


def _apply_compare(ctx: RunContext, s: CompareState, c: Critique, patch: RevisePatch) -> tuple[CompareState, str]:
    row = _find_row(s, c.target)
    if patch.groups:
        return _regroup(ctx, s, row, patch), "regrouped"
    if patch.delete:
        return dataclasses.replace(s, rows=tuple(r for r in s.rows if r is not row)), "deleted"
    if not patch.cells:
        return s, "kept"
    new_row = _recontrast(ctx, s, row, _cells_from_records(ctx, s, patch.cells))
    rows = tuple(new_row if r is row else r for r in s.rows if new_row is not None or r is not row)
    return dataclasses.replace(s, rows=rows), "revised"


def _target_digest(payload: Payload, c: Critique) -> str:
    if isinstance(payload, ExtractState):
        return c.target
    return digest(fold_key(c.target), 12)


def revise(ctx: RunContext, payload: Payload, critiques: Sequence[Critique], *, iteration: int = 1) -> RevisionResult:
    """Apply critiques one at a time in the given order.

    Critiques whose target disappeared are skipped.  A revision that breaks
    attribution is re-queued once and then dropped with a warning.
    """
    queue = [(c, False) for c in critiques]
    applied = []
    scope = scope_of(payload)
    while queue:
        c, requeued = queue.pop(0)
        exists = (_find_extraction(payload, c.target) if scope is Scope.EXTRACT
                  else _find_row(payload, c.target)) is not None
        entry = {"iteration": iteration, "scope": scope.value, "kind": c.kind.value,
                 "target": c.target, "target_digest": _target_digest(payload, c), "note": c.note}
        if not exists:
            ctx.cr_log.append({**entry, "action": "stale"})
            continue
        patch = ctx.call(StageTag.REVISE, revise_payload(ctx, payload, c), note=c.kind.value,
                         critiques=(c.kind.value,))
        try:
            if scope is Scope.EXTRACT:
                payload, action = _apply_extract(ctx, payload, c, patch)
            else:
                payload, action = _apply_compare(ctx, payload, c, patch)
        except Rejected as exc:
            if requeued:
                ctx.warn(f"revision for {c.kind.value} on {c.target!r} rejected twice: {exc}")
                ctx.cr_log.append({**entry, "action": "rejected"})
            else:
                ctx.cr_log.append({**entry, "action": "requeued"})
                queue.append((c, True))
            continue
        ctx.cr_log.append({**entry, "action": action})
        applied.append(c)
    if isinstance(payload, CompareState):
        payload = dataclasses.replace(payload, rows=tuple(rank_rows(ctx, payload.rows)))
    return RevisionResult(payload, tuple(applied), 1)


def refine_loop(ctx: RunContext, payload: Payload, max_iterations: int) -> RevisionResult:
    """Alternate critique and revision until clean, stuck on an identical critique set, or out of budget."""
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    used = 0
    applied: list[Critique] = []
    previous = None
    while used < max_iterations:
        found = critique(ctx, payload)
        if not found:
            break
        keys = [c.key for c in found]
        if keys == previous:
            break
        previous = keys
        result = revise(ctx, payload, found, iteration=used + 1)
        payload = result.payload
        applied += result.applied
        used += 1
    return RevisionResult(payload, tuple(applied), max(used, 1))
