"""Acceptance criteria 1-11; each test prints one PASS/FAIL line."""

from __future__ import annotations

import itertools
import json
import random
import re
import time
import unicodedata
import warnings
from collections import Counter
from fractions import Fraction
from pathlib import Path

import pytest

from abcompare.artifacts import write_run
from abcompare.cli import main, toy_corpus_path
from abcompare.config import AppConfig, PipelineConfig
from abcompare.critique import CompareState, CritiqueKind, critique
from abcompare.distill import TaskMix, TaskTag, export_training_mix, load_runs, validate_target
from abcompare.evaluation import (
    Label,
    agreement,
    agreement_stats,
    human_majority,
    inconsistency_count,
    read_ratings,
    redundancy,
)
from abcompare.ingest import parse_manifest, tile_entity, with_sentences
from abcompare.injection import make_cases, run_ablation
from abcompare.lexicon import default_lexicon
from abcompare.model import SourceDocument, TokenBudget, summary_to_json
from abcompare.pipeline import run_pipeline, run_pipeline_detailed

from conftest import ACCEPTANCE_LINES, GOLDEN, make_corpus

ROOT = Path(__file__).resolve().parents[1]
LEX = default_lexicon()


class Criterion:
    """Context manager that records one PASS/FAIL line and re-raises failures."""

    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail if exc_type is None else f"{exc_type.__name__}: {exc}".splitlines()[0]
        line = f"criterion {self.number}: {status} - {self.title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return False


# 1 -------------------------------------------------------------------------

def test_criterion_01_reproducibility_statement():
    with Criterion(1, "reproducibility statement present") as c:
        readme = (ROOT / "README.md").read_text(encoding="utf-8")
        m = re.search(r"^## Reproducibility\n(.*?)(?=^## |\Z)", readme, re.M | re.S)
        assert m, "README has no Reproducibility section"
        body = m.group(1).lower()
        assert "not reproducible" in body
        for needed in ("useful", "summaries per second", "agreement"):
            assert needed in body, needed
        c.detail = "README states absolute figures are not reproduced"


# 2 -------------------------------------------------------------------------

def _exhaustive(values, compat):
    n = len(values)
    for size in range(n, 0, -1):
        for sub in itertools.combinations(range(n), size):
            if all(compat(values[i], values[j]) for i, j in itertools.combinations(sub, 2)):
                return n - size
    return 0


def test_criterion_02_inconsistency_oracle():
    with Criterion(2, "inconsistency_count exact") as c:
        assert inconsistency_count(["45 liters", "46 liters", "46 liters in volume", "46 liters of space"]) == 1
        rng = random.Random(2)
        start = time.perf_counter()
        mismatches = 0
        for trial in range(1000):
            n = rng.randint(0, 8)
            if trial % 2:
                pool = [f"{rng.randint(1, 4)} {u}" for u in ("liters", "kg")] + ["great", "poor", "not great"]
                values = [rng.choice(pool) + rng.choice(["", " in volume", " of space"]) for _ in range(n)]
                compat, oracle = None, LEX.compatible
            else:
                values = [f"v{i}" for i in range(n)]
                table = {p: rng.random() < 0.6 for p in itertools.combinations(values, 2)}
                compat = oracle = lambda a, b, t=table: t.get((a, b), t.get((b, a), True))
            mismatches += inconsistency_count(values, compat) != _exhaustive(values, oracle)
        elapsed = time.perf_counter() - start
        assert mismatches == 0
        assert elapsed < 10
        c.detail = f"1000 sets, 0 mismatches, {elapsed:.2f}s"


# 3 -------------------------------------------------------------------------

SYNONYM_CLUSTERS = [
    ["price", "prices", "Price", "cost", "costs"],
    ["room", "rooms", "Rooms"],
    ["amenities", "facilities", "amenity", "Facilities"],
    ["battery life", "Battery Life", "battery-life"],
    ["warranty", "warranties", "Warranty"],
    ["strap", "straps", "STRAPS"],
    ["screen", "screens"],
    ["display", "displays"],
    ["weight", "weights"],
    ["sound quality", "Sound Quality"],
    ["location", "Location", "locations"],
]


def test_criterion_03_redundancy_exact():
    with Criterion(3, "redundancy = 1 - clusters/attributes") as c:
        assert redundancy(["room", "rooms", "amenities", "facilities"]) == Fraction(1, 2)
        rng = random.Random(3)
        for _ in range(200):
            chosen = rng.sample(SYNONYM_CLUSTERS, rng.randint(1, len(SYNONYM_CLUSTERS)))
            attrs = [f for cluster in chosen for f in rng.sample(cluster, rng.randint(1, len(cluster)))]
            rng.shuffle(attrs)
            expected = 1 - Fraction(len(chosen), len(attrs))
            assert redundancy(attrs) == expected, (attrs, expected)
        c.detail = "200 summaries exact; room example = 1/2"


# 4 -------------------------------------------------------------------------

def test_criterion_04_golden_toy():
    with Criterion(4, "golden toy summary byte-for-byte") as c:
        start = time.perf_counter()
        summary = run_pipeline(("speakerx", "speakery"), toy_corpus_path())
        elapsed = time.perf_counter() - start
        manifest = parse_manifest(json.loads(toy_corpus_path().read_text()))
        assert len(manifest.entities) == 2 and len(manifest.documents) == 6
        assert summary_to_json(summary) == (GOLDEN / "toy_summary.json").read_text(encoding="utf-8")
        assert elapsed < 5
        c.detail = f"{elapsed * 1000:.0f} ms"


# 5 -------------------------------------------------------------------------

NAMES = ["Kite", "Vela", "Orca Pro", "Lumen 2", "Café Noir", "Ridge-7", "Nova", "Quill"]
ATTRS = ["price", "battery life", "weight", "design", "screen", "strap", "warranty", "color", "noise level"]
VALUES = ["$129", "12 hours", "10 hours", "1.2 pounds", "sleek", "good", "not specified", "bright and sharp",
          "a matte finish with “soft” edges", "crème colored panels", "45 liters", "46 liters of space",
          "the outer shell uses brushed metal, the frame is molded, a spare ships in the box, "
          "and the manual covers setup in six languages while owners praise it"]
NOISE = ["Subscribe for deals!", "Home | Reviews | Contact", "* * * *", "We tested it for a week.",
         "Prices may vary by region and retailer."]


def _fuzz_corpus(rng):
    a, b = rng.sample(NAMES, 2)
    docs = {}
    for me, other in ((a, b), (b, a)):
        texts = []
        for _ in range(rng.randint(1, 3)):
            parts = []
            for _ in range(rng.randint(1, 7)):
                r = rng.random()
                who = other if rng.random() < 0.1 else me
                attr, val = rng.choice(ATTRS), rng.choice(VALUES)
                if r < 0.45:
                    parts.append(f"The {attr} of {who} is {val}.")
                elif r < 0.7:
                    parts.append(f"{who}'s {attr} is {val}.")
                elif r < 0.8:
                    parts.append(unicodedata.normalize("NFD", f"The {attr} of {who} is {val}."))
                else:
                    parts.append(rng.choice(NOISE))
            texts.append(rng.choice([" ", "  ", "\n"]).join(parts))
        docs[me] = texts
    return parse_manifest(make_corpus(docs)), a, b


def _nfc(s):
    return unicodedata.normalize("NFC", s)


def test_criterion_05_extractiveness_fuzz():
    with Criterion(5, "extractiveness over 1000-case fuzz") as c:
        rng = random.Random(5)
        checked = 0
        bad = []
        for case in range(1000):
            manifest, a, b = _fuzz_corpus(rng)
            raw = {(d.entity_id, d.url): _nfc(d.raw_text) for d in manifest.documents}
            ea, eb = (manifest.entity(n.lower().replace(" ", "-")) for n in (a, b))
            summary = run_pipeline((ea.id, eb.id), manifest, PipelineConfig(cr_enabled=case % 2 == 0))
            for row in summary.rows:
                for entity, cells in ((ea, row.cell_a), (eb, row.cell_b)):
                    for cell in cells:
                        assert cell.source_urls and len(cell.source_urls) == len(cell.evidence)
                        for url, ev in zip(cell.source_urls, cell.evidence):
                            checked += 1
                            if _nfc(ev) not in raw.get((entity.id, url), ""):
                                bad.append((case, url, ev))
                        if not any(_nfc(cell.value) in _nfc(ev) for ev in cell.evidence):
                            bad.append((case, "value", cell.value))
        assert not bad, bad[:3]
        assert checked > 1000
        c.detail = f"{checked} spans checked, 0 violations"


# 6 -------------------------------------------------------------------------

def _random_docs(rng, target_bytes):
    words = ["alpha", "beta", "gamma", "battery", "price", "screen", "weight", "great", "poor", "the", "of",
             "naïve", "x" * 30]
    docs, size, i = [], 0, 0
    while size < target_bytes:
        sentences = []
        for _ in range(rng.randint(1, 60)):
            n = rng.choice([rng.randint(4, 30), rng.randint(4, 30), rng.randint(200, 9000)])
            sentences.append(" ".join(rng.choice(words) for _ in range(n)).capitalize() + ".")
        text = " ".join(sentences)
        docs.append(SourceDocument(f"https://e.example.com/{i}", "e", i + 1, text))
        size += len(text.encode())
        i += 1
    return docs


def test_criterion_06_tiling_properties():
    with Criterion(6, "tiling properties and 1 MB speed") as c:
        rng = random.Random(6)
        budget = TokenBudget()
        for target in (1_000, 20_000, 200_000, 1_000_000):
            docs = [with_sentences(d) for d in _random_docs(rng, target)]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                tiles = tile_entity(docs, budget, "e")
                again = tile_entity(docs, budget, "e")
            assert tiles == again
            assert all(t.token_total <= budget.effective for t in tiles)
            # oversized sentences come back as contiguous fragments; re-join them
            rebuilt: list[list] = []
            for s in (s for t in tiles for s in t.sentences):
                prev = rebuilt[-1] if rebuilt else None
                if prev and prev[0] == s.doc_url and prev[1] + len(prev[2]) == s.char_offset:
                    prev[2] += s.text
                else:
                    rebuilt.append([s.doc_url, s.char_offset, s.text])
            original = [(s.doc_url, s.char_offset, s.text) for d in docs for s in d.essential_sentences]
            assert Counter(map(tuple, rebuilt)) == Counter(original)
        big = _random_docs(random.Random(60), 1_000_000)
        start = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tile_entity([with_sentences(d) for d in big], budget, "e")
        elapsed = time.perf_counter() - start
        assert elapsed < 1
        c.detail = f"1 MB sentence split + tiling in {elapsed:.2f}s"


# 7 -------------------------------------------------------------------------

def test_criterion_07_cr_ablation():
    with Criterion(7, "CR ablation direction") as c:
        report = run_ablation(n_rows=100, seed=0)
        for line in report.lines():
            print("   ", line)
        for kind, res in report.kinds.items():
            assert res.injected == 100
            assert res.removal_rate >= 0.95, f"{kind.value}: {res.removal_rate:.1%}"
        assert report.cr_on.pct_useful > report.cr_off.pct_useful
        assert report.cr_on.mean_redundancy <= report.cr_off.mean_redundancy
        worst = min(r.removal_rate for r in report.kinds.values())
        c.detail = (f"min removal {worst:.0%}; useful {report.cr_on.pct_useful:.3f} vs "
                    f"{report.cr_off.pct_useful:.3f}; redundancy {report.cr_on.mean_redundancy:.4f} vs "
                    f"{report.cr_off.mean_redundancy:.4f}")


# 8 -------------------------------------------------------------------------

def _split_corpus(n_major, n_minor):
    docs = [f"Review {i}. The battery life of Alpha is 12 hours." for i in range(n_major)]
    docs += [f"Review {n_major + i}. The battery life of Alpha is 10 hours." for i in range(n_minor)]
    return parse_manifest(make_corpus({"Alpha": docs, "Beta": ["The battery life of Beta is 8 hours."]}))


def test_criterion_08_majority_faithfulness():
    with Criterion(8, "majority faithfulness") as c:
        cfg = PipelineConfig(cr_enabled=False)
        s = run_pipeline(("alpha", "beta"), _split_corpus(9, 1), cfg)
        row = next(r for r in s.rows if r.attribute == "battery life")
        assert [x.value for x in row.cell_a] == ["12 hours"]
        res = run_pipeline_detailed(("alpha", "beta"), _split_corpus(5, 5), cfg)
        row = next(r for r in res.all_rows if r.attribute == "battery life")
        assert sorted(x.value for x in row.cell_a) == ["10 hours", "12 hours"]
        ctx = res.context
        kinds = [k.kind for k in critique(ctx, CompareState(ctx.entity_a, ctx.entity_b, res.all_rows, ()))]
        assert CritiqueKind.INCONSISTENT_VALUES in kinds
        c.detail = "9-vs-1 keeps 12 hours; 5-vs-5 keeps both and is critiqued"


# 9 -------------------------------------------------------------------------

def test_criterion_09_agreement_math():
    with Criterion(9, "agreement math and symmetry") as c:
        records = read_ratings(GOLDEN / "toy_ratings.csv")
        sid = records[0].summary_id
        majority = human_majority(records)
        expected = ["YES", "YES", "NO_INCONSISTENT_VALUES", "YES", "OK", "NO_UNDERMERGED_VALUES",
                    "YES", "YES", "YES", "NO_BAD_EXTRACTION"]
        assert [majority[(sid, i)].value for i in range(10)] == expected
        stats = agreement_stats(records, {(sid, i): Label.YES for i in range(10)})
        assert Fraction(stats.human_human).limit_denominator(100) == Fraction(8, 15)
        assert stats.human_human_exact == pytest.approx(0.4, abs=1e-12)
        assert stats.human_autorater == 0.6 and stats.human_autorater_exact == 0.6
        rng = random.Random(9)
        for _ in range(100):
            n = rng.randint(1, 15)
            x = {i: rng.choice(list(Label)) for i in range(n)}
            y = {i: rng.choice(list(Label)) for i in range(n)}
            assert agreement(x, y) == agreement(y, x)
            assert agreement(x, y, binary=False) == agreement(y, x, binary=False)
        c.detail = "human-human 8/15 binary, 0.4 exact; human-CHS 0.6"


# 10 ------------------------------------------------------------------------

def test_criterion_10_throughput(tmp_path, capsys):
    with Criterion(10, "throughput >= 10 summaries/sec") as c:
        assert main(["bench", "--queries", "20", "--warmup", "2", "--out", str(tmp_path)]) == 0
        table = capsys.readouterr().out
        report = json.loads((tmp_path / "bench_report.json").read_text())
        assert report["n_measured"] == 20 and report["n_failed"] == 0
        assert report["summaries_per_sec"] >= 10
        assert {"TILE", "EXTRACT", "CR_EXTRACT", "ATTRIBUTE_MERGE", "VALUE_MERGE", "CONTRAST", "USEFULNESS",
                "CR_COMPARE"} <= set(report["per_stage_ms"])
        assert "mean per-stage time" in table
        c.detail = f"{report['summaries_per_sec']:.1f} summ/s with per-stage breakdown"


# 11 ------------------------------------------------------------------------

def test_criterion_11_export_apportionment(tmp_path):
    with Criterion(11, "export 61 at 30:1:30") as c:
        for case in make_cases(CritiqueKind.INCONSISTENT_VALUES, 160):
            result = run_pipeline_detailed((case.entity_a, case.entity_b), case.manifest, PipelineConfig())
            write_run(result, tmp_path, AppConfig(), duration_ms=0)
        examples = export_training_mix(load_runs(tmp_path), TaskMix.parse("30:1:30"), 61, seed=0)
        counts = Counter(e.task_tag for e in examples)
        assert (counts[TaskTag.EXTRACT], counts[TaskTag.ATTRIBUTE_MERGE], counts[TaskTag.COMPARE]) == (30, 1, 30)
        for ex in examples:
            validate_target(ex)
        c.detail = "30/1/30, 61 targets re-parse"
