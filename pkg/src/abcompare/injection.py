"""Error-injection harness for the critique-and-revision ablation.

Each synthetic corpus compares two made-up products and carries several rows
seeded with one defect kind plus a few clean rows.  Six kinds are planted in
the corpus text.  The remaining two cannot arise from text under the rule
backend, so ``FaultyBackend`` simulates the base-model mistake instead:
a usefulness filter that keeps everything, and an attribute merge that leaves
singular/plural variants in separate clusters.  Both arms of the ablation use
the same faulty backend; only the CR switch differs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .config import PipelineConfig
from .critique import CritiqueKind
from .evaluation import evaluate_summary, is_useful, redundancy
from .gateway import DeterministicBackend, Gateway, StageTag
from .gateway.grammar import AttributeGroup, parse_stage_output, render_stage_output
from .gateway.types import CompletionRequest, CompletionResult
from .ingest import Manifest, parse_manifest
from .lexicon import Lexicon, default_lexicon, entity_mentions, singular
from .model import ComparisonRow, ComparisonSummary
from .pipeline import run_pipeline_detailed

NOUNS = (
    "hinge", "strap", "lid", "handle", "button", "knob", "dial", "grille", "stand", "cable",
    "charger", "case", "remote", "display", "keyboard", "trackpad", "kickstand", "clip", "antenna",
    "sensor", "fan", "vent", "screen", "bezel", "frame", "base", "cover", "tray", "nozzle", "filter",
    "blade", "motor", "pump", "valve", "gasket", "dock", "mount", "pedal", "wheel", "spout",
)
PHRASES = (
    "brushed aluminum with a matte coating",
    "molded plastic with textured edges",
    "a magnetic design that snaps into place",
    "a recessed design near the rear edge",
    "a two-stage mechanism with a soft click",
    "a fabric finish in three shades",
    "powder coated steel with rounded corners",
    "a removable part that ships in the box",
    "a tool-free design that detaches by hand",
    "a low-profile design that sits flush",
)
BARE = ("good", "great", "nice", "decent", "solid", "excellent")
UNITS = ("centimeters", "grams", "millimeters", "watts", "minutes")
UNHELPFUL_VALUES = ("not specified", "unknown", "tbd", "various")
CLAUSES = (
    "the outer shell uses a brushed metal finish",
    "the inner frame is made from a single molded piece",
    "a spare part ships in the retail box",
    "the manual covers setup in six languages",
    "owners report that it survives daily commutes",
    "the coating resists fingerprints after weeks of use",
    "replacement parts can be ordered from the maker",
    "the mounting points line up with standard brackets",
)
CLEAN_ROWS = 3
DOCS_PER_ENTITY = 3


class FaultyBackend:
    """Rule backend whose generation stages make one kind of mistake."""

    def __init__(self, lexicon: Lexicon | None = None, *, keep_all_rows: bool = False,
                 split_merges: bool = False):
        self.inner = DeterministicBackend(lexicon)
        self.keep_all_rows = keep_all_rows
        self.split_merges = split_merges
        self.backend_id = self.inner.backend_id + "+faults"

    def complete(self, req: CompletionRequest) -> CompletionResult:
        text = self.inner.respond(req.stage_tag, req.prompt)
        stage = StageTag(req.stage_tag)
        if self.keep_all_rows and stage is StageTag.USEFULNESS:
            text = render_stage_output(StageTag.USEFULNESS, "YES")
        elif self.split_merges and stage is StageTag.ATTRIBUTE_MERGE:
            groups = parse_stage_output(StageTag.ATTRIBUTE_MERGE, text)
            split = [AttributeGroup(m, (m,)) for grp in groups for m in grp.members]
            text = render_stage_output(StageTag.ATTRIBUTE_MERGE, split)
        return CompletionResult(text, 0, self.backend_id)


@dataclass(frozen=True)
class InjectedRow:
    kind: CritiqueKind
    attribute: str


@dataclass(frozen=True)
class SyntheticCase:
    kind: CritiqueKind
    manifest: Manifest
    entity_a: str
    entity_b: str
    injected: tuple[InjectedRow, ...]


def _plural(noun: str) -> str:
    return noun[:-1] + "ies" if noun.endswith("y") else noun + "s"


class _Builder:
    def __init__(self, name_a: str, name_b: str):
        self.names = {"A": name_a, "B": name_b}
        self.docs: dict[str, list[list[str]]] = {s: [[] for _ in range(DOCS_PER_ENTITY)] for s in "AB"}

    def put(self, side: str, doc: int, sentence: str):
        self.docs[side][doc % DOCS_PER_ENTITY].append(sentence)

    def fact(self, side: str, doc: int, attr: str, value: str, about: str | None = None, plural=False):
        who = self.names[about or side]
        self.put(side, doc, f"The {attr} of {who} {'are' if plural else 'is'} {value}.")

    def manifest(self, ids: dict[str, str]) -> Manifest:
        entities = []
        for side in "AB":
            docs = [
                {"url": f"https://{ids[side]}.example.com/review-{i + 1}", "search_rank": i + 1,
                 "text": " ".join([f"Notes on the {self.names[side]}.", *sentences])}
                for i, sentences in enumerate(self.docs[side])
            ]
            entities.append({"id": ids[side], "display_name": self.names[side], "documents": docs})
        return parse_manifest({"entities": entities})


def _long_claim(rng: random.Random) -> str:
    parts = rng.sample(CLAUSES, 4)
    return f"{parts[0]}, {parts[1]}, {parts[2]}, and {parts[3]}"


def _plant(b: _Builder, kind: CritiqueKind, attr: str, rng: random.Random) -> str:
    """Write the sentences for one defective row; returns the row's attribute."""
    K = CritiqueKind
    pa, pb = rng.sample(PHRASES, 2)
    d = rng.randrange(DOCS_PER_ENTITY)
    if kind is K.INSUFFICIENT_CONTEXT:
        b.fact("A", d, attr, rng.choice(BARE))
        b.put("A", d + 1, f"In daily use the {attr} on the {b.names['A']} proved to be {pa}.")
        b.fact("B", d, attr, pb)
    elif kind is K.WRONG_ENTITY:
        b.fact("A", d, attr, pa)
        b.fact("A", d + 1, attr, pb, about="B")
        b.fact("B", d, attr, pb)
    elif kind is K.UNHELPFUL_ATTRIBUTE_EXTRACT:
        b.fact("A", d, attr, pa)
        b.fact("B", d, attr, pb)
    elif kind is K.ORTHOGONAL_VALUES:
        b.fact("A", d, attr, f"{rng.randint(5, 900)} {rng.choice(UNITS)}")
        b.fact("B", d, attr, pb)
    elif kind is K.INCONSISTENT_VALUES:
        unit = rng.choice(UNITS)
        n1, n2, n3 = rng.sample(range(5, 900), 3)
        b.fact("A", d, attr, f"{n1} {unit}")
        b.fact("A", d + 1, attr, f"{n2} {unit}")
        b.fact("B", d, attr, f"{n3} {unit}")
    elif kind is K.UNHELPFUL_ATTRIBUTE_OR_VALUE:
        b.fact("A", d, attr, rng.choice(UNHELPFUL_VALUES))
        b.fact("A", d + 1, attr, pa)
        b.fact("B", d, attr, pb)
    elif kind is K.UNDER_OR_OVER_MERGED:
        b.fact("A", d, attr, pa)
        b.fact("B", d, _plural(attr), pb, plural=True)
    elif kind is K.LONG_COMPLEX_CLAIM:
        b.fact("A", d, attr, _long_claim(rng))
        b.fact("B", d, attr, pb)
    return attr


def _attribute_pool(kind: CritiqueKind, lexicon: Lexicon) -> list[str]:
    if kind is CritiqueKind.UNHELPFUL_ATTRIBUTE_EXTRACT:
        seen, pool = set(), []
        for a in sorted(lexicon.attribute_stoplist):
            if lexicon.attribute_key(a) not in seen:
                seen.add(lexicon.attribute_key(a))
                pool.append(a)
        return pool
    pool = [n for n in NOUNS if singular(n) == n and singular(_plural(n)) == n]
    return [n for n in pool if not lexicon.is_unhelpful_attribute(n)]


def make_cases(kind: CritiqueKind, n_rows: int = 100, *, per_corpus: int = 10, seed: int = 0,
               lexicon: Lexicon | None = None) -> list[SyntheticCase]:
    """Synthetic corpora carrying ``n_rows`` defective rows of one kind in total."""
    lex = lexicon or default_lexicon()
    rng = random.Random(f"{kind.value}:{seed}")
    pool = _attribute_pool(kind, lex)
    clean_pool = _attribute_pool(CritiqueKind.WRONG_ENTITY, lex)
    per_corpus = min(per_corpus, len(pool))
    cases = []
    made = 0
    c = 0
    while made < n_rows:
        take = min(per_corpus, n_rows - made)
        ids = {"A": f"kestrel-{c}", "B": f"osprey-{c}"}
        b = _Builder(f"Kestrel K{c}", f"Osprey O{c}")
        attrs = rng.sample(pool, take)
        injected = tuple(InjectedRow(kind, _plant(b, kind, a, rng)) for a in attrs)
        used = {lex.attribute_key(a) for a in attrs}
        clean = [a for a in clean_pool if lex.attribute_key(a) not in used]
        for i, a in enumerate(rng.sample(clean, CLEAN_ROWS)):
            pa, pb = rng.sample(PHRASES, 2)
            b.fact("A", i, a, pa)
            b.fact("B", i, a, pb)
        cases.append(SyntheticCase(kind, b.manifest(ids), ids["A"], ids["B"], injected))
        made += take
        c += 1
    return cases


# ---------------------------------------------------------------------------
# defect detectors (applied to the final summary)
# ---------------------------------------------------------------------------

def _rows_for(summary: ComparisonSummary, attr: str, lex: Lexicon) -> list[ComparisonRow]:
    key = lex.attribute_key(attr)
    return [r for r in summary.rows if lex.attribute_key(r.attribute) == key]


def defect_present(summary: ComparisonSummary, row: InjectedRow, lexicon: Lexicon | None = None) -> bool:
    lex = lexicon or default_lexicon()
    K = row.kind
    rows = _rows_for(summary, row.attribute, lex)
    if K is CritiqueKind.UNDER_OR_OVER_MERGED:
        return len(rows) > 1
    if K is CritiqueKind.UNHELPFUL_ATTRIBUTE_EXTRACT:
        return bool(rows)
    for r in rows:
        a_values = [c.value for c in r.cell_a]
        if K is CritiqueKind.INSUFFICIENT_CONTEXT:
            if any(len(v.split()) < 3 and not any(ch.isdigit() for ch in v) for v in a_values):
                return True
        elif K is CritiqueKind.WRONG_ENTITY:
            table = {summary.entity_b.display_name: summary.entity_b.names}
            if any(entity_mentions(ev, table) for c in r.cell_a for ev in c.evidence):
                return True
        elif K is CritiqueKind.ORTHOGONAL_VALUES:
            nums_a = [any(ch.isdigit() for ch in v) for v in a_values]
            nums_b = [any(ch.isdigit() for ch in c.value) for c in r.cell_b]
            if nums_a and nums_b and ((all(nums_a) and not any(nums_b)) or (all(nums_b) and not any(nums_a))):
                return True
        elif K is CritiqueKind.INCONSISTENT_VALUES:
            quantities = {lex.quantity(v) for v in a_values}
            if len({q for q in quantities if q}) > 1:
                return True
        elif K is CritiqueKind.UNHELPFUL_ATTRIBUTE_OR_VALUE:
            if any(lex.is_unhelpful_value(c.value) for side in "AB" for c in r.cell(side)):
                return True
        elif K is CritiqueKind.LONG_COMPLEX_CLAIM:
            if any(len(v.split()) > 25 for v in a_values):
                return True
    return False


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

@dataclass
class KindResult:
    kind: CritiqueKind
    injected: int = 0
    present_cr_on: int = 0
    present_cr_off: int = 0

    @property
    def removal_rate(self) -> float:
        return 1 - self.present_cr_on / self.injected if self.injected else 1.0


@dataclass
class ArmStats:
    rows: int = 0
    useful: int = 0
    redundancy: list[float] = field(default_factory=list)

    @property
    def pct_useful(self) -> float:
        return self.useful / self.rows if self.rows else 0.0

    @property
    def mean_redundancy(self) -> float:
        return sum(self.redundancy) / len(self.redundancy) if self.redundancy else 0.0


@dataclass
class AblationReport:
    kinds: dict[CritiqueKind, KindResult]
    cr_on: ArmStats
    cr_off: ArmStats

    def lines(self) -> list[str]:
        out = [
            f"{k.value:<30} injected={r.injected:4d} left(on)={r.present_cr_on:3d} "
            f"left(off)={r.present_cr_off:3d} removed={r.removal_rate:.1%}"
            for k, r in self.kinds.items()
        ]
        out.append(f"%useful  on={self.cr_on.pct_useful:.3f} off={self.cr_off.pct_useful:.3f}")
        out.append(f"redundancy on={self.cr_on.mean_redundancy:.4f} off={self.cr_off.mean_redundancy:.4f}")
        return out


def _backend_for(kind: CritiqueKind, lexicon: Lexicon) -> FaultyBackend:
    return FaultyBackend(
        lexicon,
        keep_all_rows=kind is CritiqueKind.UNHELPFUL_ATTRIBUTE_EXTRACT,
        split_merges=kind is CritiqueKind.UNDER_OR_OVER_MERGED,
    )


def run_ablation(kinds: Sequence[CritiqueKind] = tuple(CritiqueKind), n_rows: int = 100, *, seed: int = 0,
                 config: PipelineConfig | None = None, lexicon: Lexicon | None = None,
                 progress: Callable[[str], None] | None = None) -> AblationReport:
    lex = lexicon or default_lexicon()
    base = (config or PipelineConfig()).replace(top_k_rows=1000)
    rater = Gateway(DeterministicBackend(lex))
    arms = {True: ArmStats(), False: ArmStats()}
    results = {}
    for kind in kinds:
        res = KindResult(kind)
        gw = Gateway(_backend_for(kind, lex), context_window=base.budget.context_window)
        for case in make_cases(kind, n_rows, seed=seed, lexicon=lex):
            res.injected += len(case.injected)
            for cr in (True, False):
                run = run_pipeline_detailed((case.entity_a, case.entity_b), case.manifest,
                                            base.replace(cr_enabled=cr), gw, lexicon=lex)
                left = sum(defect_present(run.summary, row, lex) for row in case.injected)
                if cr:
                    res.present_cr_on += left
                else:
                    res.present_cr_off += left
                report = evaluate_summary(run.summary, rater, alias_table=run.context.sources.aliases,
                                          lexicon=lex)
                arm = arms[cr]
                arm.rows += report.n_rows
                arm.useful += sum(is_useful(r.label) for r in report.ratings)
                arm.redundancy.append(float(redundancy(run.summary)))
        results[kind] = res
        if progress:
            progress(f"{kind.value}: removed {res.removal_rate:.1%}")
    return AblationReport(results, arms[True], arms[False])
