"""End-to-end composition: corpus to ranked, attributed comparison summary."""

from __future__ import annotations

import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .config import PipelineConfig
from .critique import CompareState, ExtractState, refine_loop
from .errors import CompareError, CorpusError, StageError
from .gateway import DeterministicBackend, Gateway, StageTag
from .gateway.grammar import (
    AttributeGroup,
    ExtractionItem,
    RowRecord,
    StructuredExtractionList,
    render_compare,
    render_stage_output,
)
from .ingest import Manifest, SourceIndex, check_corpus_size, read_manifest, tile_entity
from .lexicon import Lexicon, default_lexicon
from .model import (
    AttributeCluster,
    ComparisonRow,
    ComparisonSummary,
    Entity,
    Extraction,
    RunMetadata,
    Tile,
    validate_summary,
)
from .payloads import attribute_merge_payload, cell_records, compare_task_payload, extract_payload
from .stages import (
    RunContext,
    StageTrace,
    lm_attribute_merge,
    lm_contrast,
    lm_extract,
    lm_usefulness,
    value_merge_all,
)
from .text import digest, fold_key


@dataclass(frozen=True)
class TrainingCandidate:
    """A (stage input, post-revision stage output) pair recorded during a run."""

    task_tag: str
    input_text: str
    target_text: str
    trace_digest: str


@dataclass
class RunResult:
    summary: ComparisonSummary
    run_id: str
    traces: list[StageTrace]
    cr_log: list[dict]
    candidates: list[TrainingCandidate]
    manifest: Manifest
    context: RunContext
    cr_enabled: bool
    all_rows: tuple[ComparisonRow, ...] = ()
    stage_seconds: dict[str, float] = field(default_factory=dict)


def make_run_id(entity_a: Entity, entity_b: Entity, corpus_digest: str, config: PipelineConfig,
                backend_id: str) -> str:
    key = digest([entity_a.id, entity_b.id, corpus_digest, config.config_hash(), backend_id])
    return f"{entity_a.id}-vs-{entity_b.id}-{key[:10]}"


def select_documents(manifest: Manifest, entities: Sequence[Entity], per_entity: int) -> Manifest:
    """Restrict the corpus to the two entities and their ``per_entity`` best-ranked documents."""
    docs = []
    for e in entities:
        docs += sorted(manifest.documents_for(e.id), key=lambda d: d.search_rank)[:per_entity]
    return Manifest(tuple(entities), tuple(docs), manifest.path)


@contextmanager
def _stage(ctx: RunContext, name: str):
    """Time a stage and wrap its failures in StageError."""
    with ctx.timed(name):
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc, ctx.sorted_traces()) from exc


def lm_compare(ctx: RunContext, clusters: Sequence[AttributeCluster]) -> tuple[list[ComparisonRow], CompareState]:
    """Value merge, contrast (with ranking), usefulness; then comparison-scope revision when enabled."""
    with _stage(ctx, "VALUE_MERGE"):
        merged = value_merge_all(ctx, clusters)
    with _stage(ctx, "CONTRAST"):
        rows = lm_contrast(ctx, merged)
    with _stage(ctx, "USEFULNESS"):
        rows = lm_usefulness(ctx, rows)
    state = CompareState(ctx.entity_a, ctx.entity_b, tuple(rows), tuple(clusters))
    if ctx.config.cr_enabled and rows:
        with _stage(ctx, "CR_COMPARE"):
            state = refine_loop(ctx, state, ctx.config.cr_max_iterations).payload
    return list(state.rows), state


def resolve_query(manifest: Manifest, a: str | Entity, b: str | Entity) -> tuple[Entity, Entity]:
    ea = manifest.entity(a.id if isinstance(a, Entity) else a)
    eb = manifest.entity(b.id if isinstance(b, Entity) else b)
    if ea.id == eb.id:
        raise CorpusError("the two entities of a comparison must differ")
    for e in (ea, eb):
        if not manifest.documents_for(e.id):
            raise CorpusError(f"corpus has no documents for entity {e.id!r}")
    return ea, eb


def run_pipeline_detailed(
    query: tuple[str | Entity, str | Entity],
    corpus: str | Path | Manifest,
    config: PipelineConfig | None = None,
    gateway: Gateway | None = None,
    *,
    lexicon: Lexicon | None = None,
) -> RunResult:
    config = config or PipelineConfig()
    lexicon = lexicon or default_lexicon()
    if gateway is None:
        gateway = Gateway(DeterministicBackend(lexicon), context_window=config.budget.context_window)
    started = time.perf_counter()
    manifest = corpus if isinstance(corpus, Manifest) else read_manifest(corpus)
    entity_a, entity_b = resolve_query(manifest, *query)
    manifest = select_documents(manifest, (entity_a, entity_b), config.webpages_per_entity)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        check_corpus_size(manifest)
    sources = SourceIndex.build(manifest, lexicon)
    ctx = RunContext(gateway, config, sources, lexicon, entity_a=entity_a, entity_b=entity_b)

    with _stage(ctx, "TILE"):
        notes: list[str] = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tiles = {e.id: tile_entity(sources.docs_for(e.id), config.budget, e.id, notes=notes)
                     for e in (entity_a, entity_b)}
        for n in notes:
            ctx.warn(n)

    with _stage(ctx, "EXTRACT"):
        ex_a, ex_b = gateway.map(lambda e: lm_extract(ctx, e, tiles[e.id]), (entity_a, entity_b))

    if config.cr_enabled:
        with _stage(ctx, "CR_EXTRACT"):
            # sequential so the audit log order is reproducible
            results = [
                refine_loop(ctx, ExtractState(e, o, tuple(xs)), config.cr_max_iterations)
                for e, o, xs in ((entity_a, entity_b, ex_a), (entity_b, entity_a, ex_b))
            ]
            ex_a, ex_b = list(results[0].payload.extractions), list(results[1].payload.extractions)

    with _stage(ctx, "ATTRIBUTE_MERGE"):
        clusters = lm_attribute_merge(ctx, ex_a, ex_b)

    rows, state = lm_compare(ctx, clusters)
    shown = tuple(rows[: config.top_k_rows])

    traces = ctx.sorted_traces()
    meta = RunMetadata(
        backend_id=gateway.backend_id,
        config_hash=config.config_hash(),
        duration_ms=int((time.perf_counter() - started) * 1000),
        trace_ids=tuple(sorted({t.id for t in traces})),
    )
    summary = ComparisonSummary(entity_a, entity_b, shown, meta)
    with _stage(ctx, "VALIDATE"):
        violations = validate_summary(summary, sources.documents)
        if violations:
            raise CompareError("; ".join(f"{v.code} at {v.location}: {v.message}" for v in violations))

    run_id = make_run_id(entity_a, entity_b, manifest.digest, config, gateway.backend_id)
    candidates = training_candidates(ctx, tiles, ex_a, ex_b, state, rows)
    return RunResult(summary, run_id, traces, list(ctx.cr_log), candidates, manifest, ctx,
                     config.cr_enabled, tuple(rows), dict(ctx.stage_seconds))


def run_pipeline(query, corpus, config: PipelineConfig | None = None, gateway: Gateway | None = None,
                 **kwargs) -> ComparisonSummary:
    return run_pipeline_detailed(query, corpus, config, gateway, **kwargs).summary


# ---------------------------------------------------------------------------
# training candidates (post-revision stage outputs)
# ---------------------------------------------------------------------------

def training_candidates(ctx: RunContext, tiles: dict[str, list[Tile]], ex_a: Sequence[Extraction],
                        ex_b: Sequence[Extraction], state: CompareState,
                        rows: Sequence[ComparisonRow]) -> list[TrainingCandidate]:
    out = []
    by_tile: dict[str, list[Extraction]] = {}
    for x in [*ex_a, *ex_b]:
        by_tile.setdefault(x.tile_id, []).append(x)
    for entity in (state.entity_a, state.entity_b):
        for t in tiles[entity.id]:
            payload = extract_payload(entity, t)
            items = tuple(ExtractionItem(x.attribute, x.value, x.evidence) for x in by_tile.get(t.id, ()))
            target = render_stage_output(StageTag.EXTRACT, StructuredExtractionList(items))
            out.append(TrainingCandidate("EXTRACT", payload, target, digest([payload, target])))

    live_keys = {fold_key(r.attribute) for r in rows}
    pools = [p for p in state.pools if p.values_a or p.values_b]
    if pools:
        attrs = [m for p in pools for m in p.member_attributes]
        payload = attribute_merge_payload(attrs)
        target = render_stage_output(
            StageTag.ATTRIBUTE_MERGE,
            [AttributeGroup(p.canonical_attribute, p.member_attributes) for p in pools],
        )
        out.append(TrainingCandidate("ATTRIBUTE_MERGE", payload, target, digest([payload, target])))

    row_by_key = {fold_key(r.attribute): r for r in rows}
    for p in pools:
        payload = compare_task_payload(state.entity_a, state.entity_b, p)
        key = fold_key(p.canonical_attribute)
        if key in live_keys:
            r = row_by_key[key]
            rec = RowRecord(r.attribute, r.contrast_level.value, tuple(cell_records(r)))
        else:
            rec = RowRecord(p.canonical_attribute, "NONE", dropped=True)
        target = render_compare([rec])
        out.append(TrainingCandidate("COMPARE", payload, target, digest([payload, target])))
    return out


# ---------------------------------------------------------------------------
# Markdown rendering
# ---------------------------------------------------------------------------

def _md(text: str) -> str:
    return text.replace("|", "\\|").replace("\n", " ")


def summary_to_markdown(summary: ComparisonSummary) -> str:
    a, b = summary.entity_a.display_name, summary.entity_b.display_name
    lines = [f"# {a} vs {b}", "", f"| attribute | {_md(a)} | {_md(b)} | sources |", "|---|---|---|---|"]
    for row in summary.rows:
        cells = []
        refs: list[str] = []
        for side in ("A", "B"):
            parts = []
            for c in row.cell(side):
                marks = []
                for u in c.source_urls:
                    if u not in refs:
                        refs.append(u)
                    marks.append(str(refs.index(u) + 1))
                parts.append(f"{_md(c.value)} [{','.join(marks)}]")
            cells.append("; ".join(parts) or "-")
        sources = " ".join(f"[{i + 1}] {u}" for i, u in enumerate(refs))
        lines.append(f"| {_md(row.attribute)} | {cells[0]} | {cells[1]} | {_md(sources)} |")
    return "\n".join(lines) + "\n"
