from __future__ import annotations

import pytest

from abcompare.config import PipelineConfig
from abcompare.critique import CompareState, CritiqueKind, critique
from abcompare.errors import CorpusError
from abcompare.gateway import DeterministicBackend, Gateway
from abcompare.ingest import parse_manifest
from abcompare.model import row_sort_key, summary_to_json, validate_summary
from abcompare.pipeline import resolve_query, run_pipeline, run_pipeline_detailed, summary_to_markdown

from conftest import GOLDEN, make_corpus


def _battery_corpus(n12: int, n10: int):
    docs = [f"Review {i}. The battery life of Alpha is 12 hours." for i in range(n12)]
    docs += [f"Review {n12 + i}. The battery life of Alpha is 10 hours." for i in range(n10)]
    beta = [f"Notes {i}. The battery life of Beta is 8 hours." for i in range(3)]
    return parse_manifest(make_corpus({"Alpha": docs, "Beta": beta}))


def _battery(summary):
    return next(r for r in summary.rows if r.attribute == "battery life")


def test_golden_toy_summary(toy_run):
    assert summary_to_json(toy_run.summary) == (GOLDEN / "toy_summary.json").read_text(encoding="utf-8")
    assert summary_to_markdown(toy_run.summary) == (GOLDEN / "toy_summary.md").read_text(encoding="utf-8")


def test_deterministic_across_runs(toy_path):
    first = run_pipeline(("speakerx", "speakery"), toy_path)
    second = run_pipeline(("SpeakerX", "Speaker Y"), toy_path)
    assert summary_to_json(first) == summary_to_json(second)


def test_majority_keeps_only_dominant_value():
    summary = run_pipeline(("alpha", "beta"), _battery_corpus(9, 1), PipelineConfig(cr_enabled=False))
    row = _battery(summary)
    assert [(c.value, c.support_count) for c in row.cell_a] == [("12 hours", 9)]


def test_even_split_keeps_both_and_is_critiqued():
    result = run_pipeline_detailed(("alpha", "beta"), _battery_corpus(5, 5), PipelineConfig(cr_enabled=False))
    row = _battery(result.summary)
    assert sorted(c.value for c in row.cell_a) == ["10 hours", "12 hours"]
    ctx = result.context
    found = critique(ctx, CompareState(ctx.entity_a, ctx.entity_b, result.all_rows, ()))
    assert [(c.kind, c.target) for c in found] == [(CritiqueKind.INCONSISTENT_VALUES, "battery life")]


def test_even_split_resolved_by_revision():
    result = run_pipeline_detailed(("alpha", "beta"), _battery_corpus(5, 5), PipelineConfig())
    assert len(_battery(result.summary).cell_a) == 1
    assert any(e["kind"] == "INCONSISTENT_VALUES" and e["action"] == "revised" for e in result.cr_log)


def test_threshold_is_strict():
    cfg = PipelineConfig(cr_enabled=False, majority_threshold=0.9)
    row = _battery(run_pipeline(("alpha", "beta"), _battery_corpus(9, 1), cfg))
    assert len(row.cell_a) == 2


def test_rows_ranked_and_top_k(toy_path):
    result = run_pipeline_detailed(("speakerx", "speakery"), toy_path, PipelineConfig(top_k_rows=3))
    assert len(result.summary.rows) == 3
    assert list(result.all_rows) == sorted(result.all_rows, key=row_sort_key)
    assert result.summary.rows == result.all_rows[:3]


def test_unhelpful_rows_filtered(toy_run, toy_run_no_cr):
    # without CR the usefulness filter drops the stop-listed attribute
    assert toy_run_no_cr.context.removed == [
        {"stage": "USEFULNESS", "attribute": "color", "reason": "rated not useful"}]
    # with CR it is already gone at extraction time, and so are the orthogonal and unhelpful values
    on = {r.attribute: r for r in toy_run.all_rows}
    assert "color" not in on and "height" not in on
    assert on["microphone"].cell_b == ()
    off = {r.attribute: r for r in toy_run_no_cr.all_rows}
    assert [c.value for c in off["microphone"].cell_b] == ["not specified"]


def test_summary_is_extractive(toy_run):
    assert validate_summary(toy_run.summary, toy_run.context.sources.documents) == []
    for row in toy_run.summary.rows:
        for side in "AB":
            for cell in row.cell(side):
                assert len(cell.source_urls) == len(cell.evidence) <= cell.support_count
                assert any(cell.value in ev for ev in cell.evidence)


def test_wrong_entity_sentence_does_not_leak(toy_run):
    battery = _battery(toy_run.summary)
    assert [c.value for c in battery.cell_a] == ["12 hours"]
    assert all("SpeakerY" not in ev for c in battery.cell_a for ev in c.evidence)


def test_resolve_query_errors(toy_manifest):
    with pytest.raises(CorpusError):
        resolve_query(toy_manifest, "speakerx", "nonexistent")
    with pytest.raises(CorpusError):
        resolve_query(toy_manifest, "speakerx", "SpeakerX")


def test_entity_without_documents():
    data = make_corpus({"Alpha": ["The price of Alpha is $5."], "Beta": []})
    with pytest.raises(CorpusError):
        run_pipeline(("alpha", "beta"), parse_manifest(data))


def test_empty_extraction_gives_empty_summary():
    data = make_corpus({"Alpha": ["Nothing to see here at all today."], "Beta": ["Also nothing useful in here."]})
    result = run_pipeline_detailed(("alpha", "beta"), parse_manifest(data))
    assert result.summary.rows == ()


def test_run_id_depends_on_config(toy_path):
    a = run_pipeline_detailed(("speakerx", "speakery"), toy_path, PipelineConfig())
    b = run_pipeline_detailed(("speakerx", "speakery"), toy_path, PipelineConfig(cr_enabled=False))
    assert a.run_id != b.run_id
    assert a.run_id.startswith("speakerx-vs-speakery-")


def test_parallel_gateway_same_result(toy_path):
    seq = run_pipeline(("speakerx", "speakery"), toy_path, gateway=Gateway(DeterministicBackend(), max_parallel=1))
    par = run_pipeline(("speakerx", "speakery"), toy_path, gateway=Gateway(DeterministicBackend(), max_parallel=16))
    assert summary_to_json(seq) == summary_to_json(par)


def test_markdown_escapes_pipes():
    data = make_corpus({"Alpha": ["The finish of Alpha is matte | gloss options."],
                        "Beta": ["The finish of Beta is a brushed steel surface."]})
    md = summary_to_markdown(run_pipeline(("alpha", "beta"), parse_manifest(data)))
    assert "matte \\| gloss" in md
