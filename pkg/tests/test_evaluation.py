from __future__ import annotations

import itertools
import random
import time
import warnings
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from abcompare.errors import CompareError
from abcompare.evaluation import (
    EvalInputError,
    Label,
    RatingRecord,
    agreement,
    agreement_stats,
    evaluate_summary,
    human_majority,
    inconsistency_count,
    latency_histogram,
    majority_opinion,
    max_compatible_subset,
    ranking_precision_at_k,
    read_ratings,
    redundancy,
    throughput_bench,
    write_ratings,
)

from abcompare.lexicon import default_lexicon

from conftest import GOLDEN

LEX = default_lexicon()

LITERS = ["45 liters", "46 liters", "46 liters in volume", "46 liters of space"]


# -- oracles -----------------------------------------------------------------

def brute_force_inconsistency(values, compat):
    """n minus the largest subset whose members are pairwise compatible, by enumeration."""
    n = len(values)
    for size in range(n, 0, -1):
        for subset in itertools.combinations(range(n), size):
            if all(compat(values[i], values[j]) for i, j in itertools.combinations(subset, 2)):
                return n - size
    return 0


def random_compat(rng, values, p):
    table = {}
    for a, b in itertools.combinations(sorted(set(values)), 2):
        table[(a, b)] = table[(b, a)] = rng.random() < p
    return lambda a, b: a == b or table[(a, b)]


# -- inconsistency -----------------------------------------------------------

def test_liters_example():
    assert inconsistency_count(LITERS) == 1


def test_inconsistency_matches_exhaustive_oracle():
    rng = random.Random(7)
    start = time.perf_counter()
    for trial in range(1000):
        n = rng.randint(0, 8)
        if trial % 2:
            values = [f"v{rng.randrange(12)}" for _ in range(n)]
            compat = random_compat(rng, values, rng.random())
        else:
            values = [f"{rng.randint(1, 4)} {rng.choice(['liters', 'kg', 'hours'])}" for _ in range(n)]
            compat = None
        oracle_compat = compat or LEX.compatible
        assert inconsistency_count(values, compat) == brute_force_inconsistency(values, oracle_compat)
    assert time.perf_counter() - start < 10


@given(st.lists(st.integers(0, 5), max_size=8), st.randoms(use_true_random=False))
def test_inconsistency_permutation_invariant(nums, rnd):
    values = [f"{n} liters" for n in nums]
    shuffled = values[:]
    rnd.shuffle(shuffled)
    c = inconsistency_count(values)
    assert c == inconsistency_count(shuffled)
    assert c == len(values) - max((values.count(v) for v in values), default=0)


def test_inconsistency_large_input_warns_and_bounds():
    values = [f"{i % 3} liters" for i in range(30)]
    with pytest.warns(RuntimeWarning):
        assert inconsistency_count(values) == 20


def test_max_compatible_subset_edge_cases():
    assert max_compatible_subset(0, lambda i, j: True) == 0
    assert max_compatible_subset(5, lambda i, j: True) == 5
    assert max_compatible_subset(5, lambda i, j: False) == 1


# -- redundancy --------------------------------------------------------------

def test_redundancy_room_example():
    assert redundancy(["room", "rooms", "amenities", "facilities"]) == Fraction(1, 2)
    assert redundancy([]) == 0


def test_redundancy_exact_on_synthetic_summaries():
    rng = random.Random(3)
    for _ in range(200):
        k = rng.randint(1, 8)
        sizes = [rng.randint(1, 4) for _ in range(k)]
        attrs = [f"c{c}_m{m}" for c, size in enumerate(sizes) for m in range(size)]
        rng.shuffle(attrs)

        def oracle(items):
            groups = {}
            for a in items:
                groups.setdefault(a.split("_")[0], []).append(a)
            return list(groups.values())

        assert redundancy(attrs, oracle) == 1 - Fraction(k, sum(sizes))


def test_redundancy_rejects_non_partition():
    with pytest.raises(ValueError):
        redundancy(["a", "b"], lambda items: [["a"]])


# -- precision@k -------------------------------------------------------------

def test_precision_at_k():
    rows = list(range(7))
    assert ranking_precision_at_k(rows, [1, 1, 0, 1, 0, 1, 1], 5) == 0.6
    assert ranking_precision_at_k(rows[:2], [1, 0], 5) == 0.5
    assert ranking_precision_at_k([], [], 5) == 0.0
    with pytest.raises(ValueError):
        ranking_precision_at_k(rows, [1] * 7, 0)


# -- majority and agreement ---------------------------------------------------

def test_majority_ties_prefer_no_family():
    assert majority_opinion(["YES", "OK", "NO_UNDERMERGED_VALUES"]) is Label.NO_UNDERMERGED_VALUES
    assert majority_opinion(["YES", "OK"]) is Label.OK
    assert majority_opinion(["OK", "YES", "YES"]) is Label.YES
    with pytest.raises(ValueError):
        majority_opinion([])


@given(st.lists(st.sampled_from(list(Label)), min_size=1, max_size=9), st.sampled_from(list(Label)))
def test_majority_faithfulness(others, winner):
    ratings = others + [winner] * (len(others) + 1)
    assert majority_opinion(ratings) is winner


def test_golden_agreement_fixture():
    records = read_ratings(GOLDEN / "toy_ratings.csv")
    assert len(records) == 30
    majority = human_majority(records)
    sid = records[0].summary_id
    assert [majority[(sid, i)].value for i in range(10)] == [
        "YES", "YES", "NO_INCONSISTENT_VALUES", "YES", "OK",
        "NO_UNDERMERGED_VALUES", "YES", "YES", "YES", "NO_BAD_EXTRACTION"]
    auto = {(sid, i): Label.YES for i in range(10)}
    stats = agreement_stats(records, auto)
    assert stats.n_rows == 10 and stats.n_raters == 3
    assert stats.human_human == pytest.approx(8 / 15)
    assert stats.human_human_exact == pytest.approx(0.4)
    assert stats.human_autorater == pytest.approx(0.6)
    assert stats.human_autorater_exact == pytest.approx(0.6)


def test_agreement_symmetric_random_pairs():
    rng = random.Random(11)
    labels = list(Label)
    for _ in range(100):
        n = rng.randint(1, 20)
        x = {i: rng.choice(labels) for i in range(n)}
        y = {i: rng.choice(labels) for i in range(n)}
        for binary in (True, False):
            assert agreement(x, y, binary=binary) == agreement(y, x, binary=binary)
        assert agreement(x, x, binary=False) == 1.0


def test_agreement_requires_same_rows():
    with pytest.raises(ValueError):
        agreement({1: "YES"}, {2: "YES"})
    with pytest.raises(ValueError):
        agreement({}, {})


def test_ok_is_useful_toggle():
    x, y = {0: "OK"}, {0: "YES"}
    assert agreement(x, y) == 0.0
    assert agreement(x, y, ok_is_useful=True) == 1.0


# -- ratings file ------------------------------------------------------------

def test_ratings_round_trip(tmp_path):
    recs = [RatingRecord("s", i, "r1", Label.YES) for i in range(3)]
    write_ratings(tmp_path / "r.csv", recs)
    assert read_ratings(tmp_path / "r.csv") == recs


@pytest.mark.parametrize("content", [
    "summary_id,row,rater_id,label\ns,0,r,YES\n",
    "summary_id,row_index,rater_id,label\ns,0,r,MAYBE\n",
    "summary_id,row_index,rater_id,label\ns,x,r,YES\n",
    "summary_id,row_index,rater_id,label\ns,-1,r,YES\n",
    "summary_id,row_index,rater_id,label\ns,0,r,YES\ns,0,r,OK\n",
    "",
])
def test_malformed_ratings(tmp_path, content):
    p = tmp_path / "bad.csv"
    p.write_text(content)
    with pytest.raises(EvalInputError):
        read_ratings(p)


def test_missing_ratings_file(tmp_path):
    with pytest.raises(EvalInputError):
        read_ratings(tmp_path / "absent.csv")


# -- summary evaluation ------------------------------------------------------

def test_evaluate_toy_runs(toy_run, toy_run_no_cr, det_gateway):
    on = evaluate_summary(toy_run.summary, det_gateway, alias_table=toy_run.context.sources.aliases)
    off = evaluate_summary(toy_run_no_cr.summary, det_gateway, alias_table=toy_run.context.sources.aliases)
    assert (on.pct_rows_useful, on.redundancy, on.inconsistency_count, on.precision_at_k) == (1.0, 0.0, 0, 1.0)
    assert (off.pct_rows_useful, off.redundancy, off.inconsistency_count, off.precision_at_k) == (0.5, 0.0, 3, 0.4)
    assert on.pct_rows_useful > off.pct_rows_useful


def test_evaluate_rejects_out_of_range_rating(toy_run, det_gateway):
    bad = [RatingRecord("s", 99, "r1", Label.YES)]
    with pytest.raises(EvalInputError):
        evaluate_summary(toy_run.summary, det_gateway, summary_id="s", human_ratings=bad)


def test_autorater_runs_at_temperature_zero(toy_run, det_gateway):
    evaluate_summary(toy_run.summary, det_gateway)
    # every AUTORATE request is validated to temperature 0 at construction
    assert det_gateway.calls == len(toy_run.summary.rows)


# -- benchmark ---------------------------------------------------------------

def test_throughput_bench_counts_and_breakdown():
    calls = []

    def run_one(q):
        calls.append(q)
        if q == "bad":
            raise CompareError("nope")
        return {"EXTRACT": 0.001, "CONTRAST": 0.002}

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = throughput_bench(run_one, ["w1", "w2", "a", "b", "bad", "c"], warmup=2)
    assert calls == ["w1", "w2", "a", "b", "bad", "c"]
    assert rep.n_measured == 3 and rep.n_failed == 1 and rep.n_warmup == 2
    assert rep.per_stage_ms == pytest.approx({"EXTRACT": 1.0, "CONTRAST": 2.0})
    assert sum(c for _, c in rep.histogram) == 3
    assert "summaries/sec" in rep.table()


def test_throughput_bench_parallel():
    rep = throughput_bench(lambda q: {}, list(range(12)), warmup=2, parallel=4)
    assert rep.n_measured == 10 and rep.parallel == 4


def test_throughput_bench_needs_measured_queries():
    with pytest.raises(ValueError):
        throughput_bench(lambda q: None, ["a"], warmup=1)


def test_latency_histogram_buckets():
    hist = dict(latency_histogram([0.5, 3, 7000]))
    assert hist["<=1"] == 1 and hist["<=5"] == 1 and hist[">5000"] == 1
