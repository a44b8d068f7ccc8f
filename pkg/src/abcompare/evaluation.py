"""Row-level helpfulness rating, summary metrics, rater agreement and the throughput benchmark."""

from __future__ import annotations

import csv
import enum
import itertools
import logging
import statistics
import time
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import CompareError
from .gateway import Gateway, StageTag
from .lexicon import Lexicon, default_lexicon
from .model import ComparisonRow, ComparisonSummary, Entity
from .payloads import autorate_payload

log = logging.getLogger(__name__)

EXACT_SEARCH_LIMIT = 20
LATENCY_BUCKETS_MS = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000)


class EvalInputError(CompareError):
    """Missing or malformed evaluation input (summary artifact or ratings file)."""


class Label(str, enum.Enum):
    YES = "YES"
    NO_BAD_EXTRACTION = "NO_BAD_EXTRACTION"
    NO_INCONSISTENT_VALUES = "NO_INCONSISTENT_VALUES"
    NO_UNDERMERGED_VALUES = "NO_UNDERMERGED_VALUES"
    NO_ORTHOGONAL_VALUES = "NO_ORTHOGONAL_VALUES"
    OK = "OK"

    @property
    def is_no(self) -> bool:
        return self.value.startswith("NO_")


def is_useful(label: Label | str, ok_is_useful: bool = False) -> bool:
    label = Label(label)
    return label is Label.YES or (ok_is_useful and label is Label.OK)


@dataclass(frozen=True)
class RowRating:
    label: Label
    rater_id: str


# ---------------------------------------------------------------------------
# CHS autorater
# ---------------------------------------------------------------------------

def chs_rate_row(gateway: Gateway, row: ComparisonRow, entity_a: Entity, entity_b: Entity,
                 alias_table: Mapping[str, Sequence[str]] | None = None, *, rater_id: str = "chs") -> RowRating:
    """Rate one row with the autorater (always at temperature 0)."""
    table = dict(alias_table or {})
    for e in (entity_a, entity_b):
        table.setdefault(e.display_name, e.names)
    value, _ = gateway.call(StageTag.AUTORATE, autorate_payload(entity_a, entity_b, row, table), temperature=0.0)
    return RowRating(Label(value), rater_id)


# ---------------------------------------------------------------------------
# Summary-level metrics
# ---------------------------------------------------------------------------

ClusterOracle = Callable[[Sequence[str]], Sequence[Sequence[str]]]
CompatOracle = Callable[[str, str], bool]


def lexicon_cluster_oracle(lexicon: Lexicon | None = None) -> ClusterOracle:
    """Cluster attributes that agree after normalization and the synonym table."""
    lex = lexicon or default_lexicon()

    def oracle(attributes: Sequence[str]) -> list[list[int]]:
        groups: dict[str, list[str]] = {}
        for a in attributes:
            groups.setdefault(lex.attribute_key(a), []).append(a)
        return list(groups.values())

    return oracle


def redundancy(summary: ComparisonSummary | Sequence[str], cluster_oracle: ClusterOracle | None = None) -> Fraction:
    """1 - clusters/attributes over the summary's row attributes, as an exact fraction (0 when empty)."""
    attributes = [r.attribute for r in summary.rows] if isinstance(summary, ComparisonSummary) else list(summary)
    if not attributes:
        return Fraction(0)
    clusters = (cluster_oracle or lexicon_cluster_oracle())(attributes)
    covered = sorted(a for c in clusters for a in c)
    if covered != sorted(attributes):
        raise ValueError("cluster oracle must partition the attributes")
    return 1 - Fraction(len(clusters), len(attributes))


def lexicon_compat_oracle(lexicon: Lexicon | None = None) -> CompatOracle:
    lex = lexicon or default_lexicon()
    return lex.compatible


def max_compatible_subset(n: int, compatible: Callable[[int, int], bool]) -> int:
    """Size of the largest pairwise-compatible subset of ``range(n)`` (exact branch and bound)."""
    adj = [{j for j in range(n) if j != i and compatible(i, j)} for i in range(n)]
    best = 0

    def expand(clique_size: int, candidates: list[int]):
        nonlocal best
        if not candidates:
            best = max(best, clique_size)
            return
        if clique_size + len(candidates) <= best:
            return
        for idx, v in enumerate(candidates):
            if clique_size + len(candidates) - idx <= best:
                return
            expand(clique_size + 1, [u for u in candidates[idx + 1:] if u in adj[v]])

    order = sorted(range(n), key=lambda i: -len(adj[i]))
    expand(0, order)
    return best


def _greedy_compatible(n: int, compatible: Callable[[int, int], bool]) -> int:
    chosen: list[int] = []
    degree = {i: sum(compatible(i, j) for j in range(n) if j != i) for i in range(n)}
    for i in sorted(range(n), key=lambda i: (-degree[i], i)):
        if all(compatible(i, j) for j in chosen):
            chosen.append(i)
    return len(chosen)


def inconsistency_count(values: Sequence[str], compat_oracle: CompatOracle | None = None) -> int:
    """Number of values outside the largest mutually compatible subset."""
    values = list(values)
    n = len(values)
    if n == 0:
        return 0
    compat = compat_oracle or lexicon_compat_oracle()
    cache: dict[tuple[int, int], bool] = {}

    def ok(i: int, j: int) -> bool:
        key = (min(i, j), max(i, j))
        if key not in cache:
            cache[key] = bool(compat(values[key[0]], values[key[1]]))
        return cache[key]

    if n <= EXACT_SEARCH_LIMIT:
        return n - max_compatible_subset(n, ok)
    warnings.warn(f"{n} values exceed the exact search limit; using a greedy bound", RuntimeWarning)
    return n - _greedy_compatible(n, ok)


def summary_inconsistency(summary: ComparisonSummary, compat_oracle: CompatOracle | None = None) -> int:
    """Inconsistent values summed over every (row, entity) cell of a summary."""
    return sum(
        inconsistency_count([c.value for c in row.cell(side)], compat_oracle)
        for row in summary.rows for side in ("A", "B")
    )


def ranking_precision_at_k(rows: Sequence, useful: Sequence[bool], k: int = 5) -> float:
    """Share of useful rows among the top min(k, len(rows)) rows (0 for no rows)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = min(k, len(rows))
    if n == 0:
        return 0.0
    if len(useful) < n:
        raise ValueError(f"labels cover {len(useful)} rows, need {n}")
    return sum(bool(u) for u in useful[:n]) / n


# ---------------------------------------------------------------------------
# Rater aggregation and agreement
# ---------------------------------------------------------------------------

def _label_of(r: RowRating | Label | str) -> Label:
    return r.label if isinstance(r, RowRating) else Label(r)


def majority_opinion(ratings: Sequence[RowRating | Label | str]) -> Label:
    """Most frequent label; ties go to a NO-family label, then the lexicographically smallest."""
    if not ratings:
        raise ValueError("majority_opinion needs at least one rating")
    counts = Counter(_label_of(r) for r in ratings)
    top = max(counts.values())
    tied = [lab for lab, c in counts.items() if c == top]
    return min(tied, key=lambda lab: (not lab.is_no, lab.value))


def agreement(x: Mapping, y: Mapping, *, binary: bool = True, ok_is_useful: bool = False) -> float:
    """Fraction of rows on which two raters agree; labels are collapsed to useful/not useful when ``binary``."""
    if set(x) != set(y):
        raise ValueError("agreement needs ratings over the same rows")
    if not x:
        raise ValueError("agreement needs at least one row")

    def norm(v):
        lab = _label_of(v)
        return is_useful(lab, ok_is_useful) if binary else lab

    same = sum(norm(x[k]) == norm(y[k]) for k in x)
    return same / len(x)


@dataclass(frozen=True)
class RatingRecord:
    summary_id: str
    row_index: int
    rater_id: str
    label: Label


RATINGS_COLUMNS = ("summary_id", "row_index", "rater_id", "label")


def read_ratings(path: str | Path) -> list[RatingRecord]:
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise EvalInputError(f"cannot read ratings file {path}: {exc}") from exc
    out = []
    seen = set()
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != list(RATINGS_COLUMNS):
            raise EvalInputError(f"ratings file must have columns {','.join(RATINGS_COLUMNS)}")
        for line, rec in enumerate(reader, start=2):
            try:
                label = Label(rec["label"].strip())
                idx = int(rec["row_index"])
            except (ValueError, AttributeError) as exc:
                raise EvalInputError(f"{path}:{line}: malformed rating ({exc})") from exc
            if idx < 0 or not rec["summary_id"] or not rec["rater_id"]:
                raise EvalInputError(f"{path}:{line}: malformed rating")
            key = (rec["summary_id"], idx, rec["rater_id"])
            if key in seen:
                raise EvalInputError(f"{path}:{line}: duplicate rating for {key}")
            seen.add(key)
            out.append(RatingRecord(rec["summary_id"], idx, rec["rater_id"], label))
    return out


def write_ratings(path: str | Path, records: Iterable[RatingRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATINGS_COLUMNS)
        for r in records:
            w.writerow([r.summary_id, r.row_index, r.rater_id, r.label.value])


@dataclass(frozen=True)
class AgreementStats:
    human_human: float | None
    human_autorater: float | None
    n_rows: int
    n_raters: int = 0
    human_human_exact: float | None = None
    human_autorater_exact: float | None = None


def by_rater(records: Iterable[RatingRecord]) -> dict[str, dict[tuple[str, int], Label]]:
    out: dict[str, dict[tuple[str, int], Label]] = defaultdict(dict)
    for r in records:
        out[r.rater_id][(r.summary_id, r.row_index)] = r.label
    return dict(out)


def human_majority(records: Iterable[RatingRecord]) -> dict[tuple[str, int], Label]:
    grouped: dict[tuple[str, int], list[Label]] = defaultdict(list)
    for r in records:
        grouped[(r.summary_id, r.row_index)].append(r.label)
    return {k: majority_opinion(v) for k, v in sorted(grouped.items())}


def agreement_stats(human: Sequence[RatingRecord], autorater: Mapping[tuple[str, int], Label] | None = None,
                    *, ok_is_useful: bool = False) -> AgreementStats:
    """Mean pairwise human agreement and majority-human vs autorater agreement."""
    raters = by_rater(human)
    rows = set().union(*raters.values()) if raters else set()
    hh = hh_exact = None
    if len(raters) >= 2:
        pairs = list(itertools.combinations(sorted(raters), 2))
        hh = statistics.fmean(agreement(raters[a], raters[b], ok_is_useful=ok_is_useful) for a, b in pairs)
        hh_exact = statistics.fmean(agreement(raters[a], raters[b], binary=False) for a, b in pairs)
    ha = ha_exact = None
    if raters and autorater is not None:
        majority = human_majority(human)
        auto = {k: autorater[k] for k in majority if k in autorater}
        if set(auto) != set(majority):
            raise ValueError("autorater labels do not cover the human-rated rows")
        ha = agreement(majority, auto, ok_is_useful=ok_is_useful)
        ha_exact = agreement(majority, auto, binary=False)
    return AgreementStats(hh, ha, len(rows), len(raters), hh_exact, ha_exact)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RatedRow:
    row_index: int
    attribute: str
    label: Label


@dataclass(frozen=True)
class EvalReport:
    pct_rows_useful: float
    redundancy: float
    inconsistency_count: int
    precision_at_k: float
    k: int = 5
    n_rows: int = 0
    ratings: tuple[RatedRow, ...] = ()
    agreement: AgreementStats | None = None
    ok_is_useful: bool = False


def evaluate_summary(
    summary: ComparisonSummary,
    gateway: Gateway,
    *,
    summary_id: str = "",
    alias_table: Mapping[str, Sequence[str]] | None = None,
    human_ratings: Sequence[RatingRecord] | None = None,
    k: int = 5,
    ok_is_useful: bool = False,
    lexicon: Lexicon | None = None,
) -> EvalReport:
    lex = lexicon or default_lexicon()
    table = dict(alias_table) if alias_table is not None else lex.alias_table(
        (e.display_name, e.aliases) for e in (summary.entity_a, summary.entity_b))
    labels = gateway.map(
        lambda r: chs_rate_row(gateway, r, summary.entity_a, summary.entity_b, table).label, summary.rows
    )
    useful = [is_useful(lab, ok_is_useful) for lab in labels]
    n = len(labels)
    stats = None
    if human_ratings:
        mine = [r for r in human_ratings if r.summary_id == summary_id] if summary_id else list(human_ratings)
        for r in mine:
            if r.row_index >= n:
                raise EvalInputError(f"rating for row {r.row_index} but the summary has {n} rows")
        auto = {(r.summary_id, r.row_index): labels[r.row_index] for r in mine}
        stats = agreement_stats(mine, auto, ok_is_useful=ok_is_useful)
    return EvalReport(
        pct_rows_useful=sum(useful) / n if n else 0.0,
        redundancy=float(redundancy(summary, lexicon_cluster_oracle(lex))),
        inconsistency_count=summary_inconsistency(summary, lex.compatible),
        precision_at_k=ranking_precision_at_k(summary.rows, useful, k),
        k=k,
        n_rows=n,
        ratings=tuple(RatedRow(i, r.attribute, lab) for i, (r, lab) in enumerate(zip(summary.rows, labels))),
        agreement=stats,
        ok_is_useful=ok_is_useful,
    )


def mean_report(reports: Sequence[EvalReport]) -> dict[str, float]:
    """Average summary-level metrics over several summaries (inconsistency is per summary)."""
    if not reports:
        raise ValueError("no reports")
    return {
        "pct_rows_useful": statistics.fmean(r.pct_rows_useful for r in reports),
        "redundancy": statistics.fmean(r.redundancy for r in reports),
        "avg_inconsistent_values": statistics.fmean(r.inconsistency_count for r in reports),
        "precision_at_k": statistics.fmean(r.precision_at_k for r in reports),
        "n_summaries": len(reports),
    }


# ---------------------------------------------------------------------------
# Throughput benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchReport:
    summaries_per_sec: float
    n_measured: int
    n_failed: int
    n_warmup: int
    wall_seconds: float
    latency_ms: tuple[float, ...]
    histogram: tuple[tuple[str, int], ...]
    per_stage_ms: dict[str, float] = field(default_factory=dict)
    parallel: int = 1

    def table(self) -> str:
        lines = [
            f"summaries/sec   {self.summaries_per_sec:.3f}",
            f"measured        {self.n_measured}  (failed {self.n_failed}, warm-up {self.n_warmup})",
            f"wall seconds    {self.wall_seconds:.3f}",
        ]
        if self.latency_ms:
            lat = sorted(self.latency_ms)
            lines.append(f"latency p50     {statistics.median(lat):.2f} ms")
            lines.append(f"latency max     {lat[-1]:.2f} ms")
        lines.append("latency histogram (ms):")
        lines += [f"  {name:>10}  {count}" for name, count in self.histogram]
        lines.append("mean per-stage time (ms):")
        lines += [f"  {name:<16}{ms:9.3f}" for name, ms in sorted(self.per_stage_ms.items())]
        return "\n".join(lines)


def latency_histogram(latencies_ms: Iterable[float], edges: Sequence[float] = LATENCY_BUCKETS_MS):
    counts = [0] * (len(edges) + 1)
    for v in latencies_ms:
        i = next((j for j, e in enumerate(edges) if v <= e), len(edges))
        counts[i] += 1
    names = [f"<={e}" for e in edges] + [f">{edges[-1]}"]
    return tuple(zip(names, counts))


def throughput_bench(run_one: Callable[[object], dict[str, float] | None], queries: Sequence,
                     *, warmup: int = 2, parallel: int = 1) -> BenchReport:
    """Time ``run_one(query)`` over ``queries``; the first ``warmup`` queries are not measured.

    ``run_one`` returns the per-stage seconds of that run (or None).  Failing
    queries are counted and excluded from the rate.
    """
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    queries = list(queries)
    measured = queries[warmup:]
    if not measured:
        raise ValueError("no measured queries left after warm-up")
    for q in queries[:warmup]:
        try:
            run_one(q)
        except CompareError as exc:
            log.warning("warm-up query failed: %s", exc)

    def timed(q):
        start = time.perf_counter()
        try:
            stages = run_one(q) or {}
        except CompareError as exc:
            log.warning("benchmark query failed: %s", exc)
            return None
        return (time.perf_counter() - start) * 1000, stages

    start = time.perf_counter()
    if parallel > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(timed, measured))
    else:
        results = [timed(q) for q in measured]
    wall = time.perf_counter() - start

    ok = [r for r in results if r is not None]
    failed = len(results) - len(ok)
    if failed:
        warnings.warn(f"{failed} benchmark queries failed and were excluded", RuntimeWarning)
    per_stage: dict[str, list[float]] = defaultdict(list)
    for _, stages in ok:
        for name, secs in stages.items():
            per_stage[name].append(secs * 1000)
    latencies = tuple(ms for ms, _ in ok)
    return BenchReport(
        summaries_per_sec=len(ok) / wall if wall > 0 else float("inf"),
        n_measured=len(ok),
        n_failed=failed,
        n_warmup=warmup,
        wall_seconds=wall,
        latency_ms=latencies,
        histogram=latency_histogram(latencies),
        per_stage_ms={k: statistics.fmean(v) for k, v in per_stage.items()},
        parallel=parallel,
    )
