from __future__ import annotations

import dataclasses
import json

import pytest
from hypothesis import given, strategies as st

from abcompare.model import (
    AttributeCluster,
    CellValue,
    ComparisonRow,
    ComparisonSummary,
    ContrastLevel,
    Entity,
    Extraction,
    RunMetadata,
    SourceDocument,
    TokenBudget,
    row_sort_key,
    summary_from_json,
    summary_to_json,
    validate_summary,
)
from abcompare.text import contains_verbatim, digest, fold_key

DOC_A = SourceDocument("https://a.example/1", "a", 1, "The price of Alpha is $10. It ships fast.")
DOC_B = SourceDocument("https://b.example/1", "b", 1, "The price of Beta is $12.")
EA, EB = Entity("a", "Alpha"), Entity("b", "Beta")


def cell(value, url, evidence, support=1):
    return CellValue(value, (url,), support, (evidence,))


def summary(*rows):
    return ComparisonSummary(EA, EB, tuple(rows), RunMetadata("det-v1", "abc"))


def price_row(**kw):
    base = dict(
        attribute="price",
        cell_a=(cell("$10", DOC_A.url, "The price of Alpha is $10."),),
        cell_b=(cell("$12", DOC_B.url, "The price of Beta is $12."),),
        contrast_level=ContrastLevel.HIGH,
        importance=2.0,
        rank_score=1.0,
    )
    base.update(kw)
    return ComparisonRow(**base)


def test_entity_requires_display_name():
    with pytest.raises(ValueError):
        Entity("x", "  ")
    with pytest.raises(ValueError):
        Entity("", "X")


def test_entity_names_dedupes_aliases():
    assert Entity("x", "X", ("X", "Ex")).names == ("X", "Ex")


def test_token_budget_effective():
    assert TokenBudget(8192, 1024).effective == 7168
    with pytest.raises(ValueError):
        TokenBudget(100, 100)


def test_extraction_value_must_be_in_evidence():
    Extraction("price", "$10", "The price is $10.", "u", "a", "t")
    with pytest.raises(ValueError):
        Extraction("price", "$11", "The price is $10.", "u", "a", "t")
    with pytest.raises(ValueError):
        Extraction(" ", "$10", "The price is $10.", "u", "a", "t")


def test_cluster_invariants():
    AttributeCluster("room", ("room", "rooms"))
    with pytest.raises(ValueError):
        AttributeCluster("room", ())
    with pytest.raises(ValueError):
        AttributeCluster("suite", ("room", "rooms"))
    with pytest.raises(ValueError):
        AttributeCluster("room", ("room", "Room"))


def test_contrast_scores():
    assert [c.score for c in ContrastLevel] == [1.0, 0.5, 0.0]


def test_valid_summary_has_no_violations():
    assert validate_summary(summary(price_row()), [DOC_A, DOC_B]) == []


def test_empty_summary_is_valid():
    assert validate_summary(summary(), []) == []


@pytest.mark.parametrize(
    "row, code",
    [
        (price_row(cell_a=(cell("$11", DOC_A.url, "The price of Alpha is $11."),)), "extractiveness"),
        (price_row(cell_a=(cell("$10", "https://nowhere", "The price of Alpha is $10."),)), "unknown_source"),
        (price_row(cell_a=(cell("$99", DOC_A.url, "The price of Alpha is $10."),)), "value_not_in_evidence"),
        (price_row(cell_a=(), cell_b=()), "empty_row"),
        (price_row(cell_a=(CellValue("$10", (), 1, ()),)), "missing_source"),
        (price_row(cell_a=(cell("$10", DOC_A.url, "The price of Alpha is $10.", support=0),)), "support"),
        (price_row(importance=-1.0), "negative_score"),
    ],
)
def test_violations(row, code):
    codes = {v.code for v in validate_summary(summary(row), [DOC_A, DOC_B])}
    assert code in codes


def test_evidence_from_other_entity_document_is_rejected():
    row = price_row(cell_a=(cell("$12", DOC_B.url, "The price of Beta is $12."),))
    assert "unknown_source" in {v.code for v in validate_summary(summary(row), [DOC_A, DOC_B])}


def test_duplicate_attribute_and_rank_order():
    r1 = price_row(rank_score=0.5)
    r2 = price_row(attribute="Price", rank_score=0.9)
    codes = {v.code for v in validate_summary(summary(r1, r2), [DOC_A, DOC_B])}
    assert {"duplicate_attribute", "rank_order"} <= codes


def test_row_sort_key_ties():
    a = price_row(attribute="b", rank_score=1.0)
    b = price_row(attribute="a", rank_score=1.0)
    assert sorted([a, b], key=row_sort_key)[0].attribute == "a"


def test_json_round_trip_and_stable_duration():
    s = summary(price_row())
    s = dataclasses.replace(s, run_metadata=dataclasses.replace(s.run_metadata, duration_ms=1234))
    text = summary_to_json(s)
    assert json.loads(text)["run_metadata"]["duration_ms"] == 0
    back = summary_from_json(text)
    assert back.rows == s.rows
    assert back.entity_a == EA
    assert summary_to_json(s, stable=False) != text


def test_fold_key_and_contains_verbatim():
    assert fold_key("  Battery   LIFE ") == "battery life"
    assert contains_verbatim("Café au lait", "Café")
    assert not contains_verbatim("abc", "")


@given(st.lists(st.text(max_size=5), max_size=5))
def test_digest_is_deterministic(items):
    assert digest(items) == digest(list(items))
    assert len(digest(items, 8)) == 8
