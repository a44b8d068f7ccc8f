"""Line-oriented grammar for stage inputs and outputs.

Every structured line is a record: a tag followed by TAB-separated fields.
Field text is escaped so that it never contains a raw TAB, newline or ``|``::

    \\  ->  \\\\        TAB -> \\t        LF -> \\n        CR -> \\r        | -> \\p

List-valued fields are joined with ``|``.  Stage outputs:

    EXTRACT          ATTR<TAB>VALUE<TAB>EVIDENCE            (or NONE)
    ATTRIBUTE_MERGE  GROUP<TAB>CENTER<TAB>M1|M2|...          (or NONE)
    VALUE_MERGE      KEEP<TAB>A|B<TAB>CENTER<TAB>I1|I2|...   (or NONE)
    CONTRAST         CONTRAST<TAB>ATTR<TAB>HIGH|LOW|NONE<TAB>HINT
    USEFULNESS       RATING: YES|NO
    AUTORATE         RATING: <LABEL>
    CRITIQUE         CRITIQUE<TAB>KIND<TAB>TARGET<TAB>NOTE   (or NONE)
    REVISE           KEEP | DELETE | EXTRACTION<TAB>ATTR<TAB>VALUE<TAB>EVIDENCE<TAB>URL
                     | CELL<TAB>A|B<TAB>VALUE<TAB>SUPPORT<TAB>URLS<TAB>EVIDENCES
                     | GROUP<TAB>CENTER<TAB>MEMBERS

The compare-task grammar used for exported training targets is
``ROW<TAB>ATTR<TAB>LEVEL`` followed by CELL lines, or ``DROP<TAB>ATTR``.

Parsers ignore prose and code fences around the records.  Stage inputs are
embedded in prompts between ``<<<INPUT`` and ``INPUT>>>`` lines.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..errors import ParseError
from .types import StageTag

BLOCK_OPEN = "<<<INPUT"
BLOCK_CLOSE = "INPUT>>>"
NONE = "NONE"

CONTRAST_LEVELS = ("HIGH", "LOW", "NONE")
USEFULNESS_LABELS = ("YES", "NO")
AUTORATE_LABELS = (
    "YES", "NO_BAD_EXTRACTION", "NO_INCONSISTENT_VALUES",
    "NO_UNDERMERGED_VALUES", "NO_ORTHOGONAL_VALUES", "OK",
)
CRITIQUE_KINDS = (
    "INSUFFICIENT_CONTEXT", "WRONG_ENTITY", "UNHELPFUL_ATTRIBUTE_EXTRACT",
    "ORTHOGONAL_VALUES", "INCONSISTENT_VALUES", "UNHELPFUL_ATTRIBUTE_OR_VALUE",
    "UNDER_OR_OVER_MERGED", "LONG_COMPLEX_CLAIM",
)

_ESC = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r", "|": "\\p"}
_UNESC = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r", "p": "|"}


_ESC_TABLE = str.maketrans(_ESC)
_UNESC_RE = re.compile(r"\\([\\tnrp])")


def escape(text: str) -> str:
    return text.translate(_ESC_TABLE)


def unescape(text: str) -> str:
    if "\\" not in text:
        return text
    return _UNESC_RE.sub(lambda m: _UNESC[m.group(1)], text)


def join_list(items: Iterable[str]) -> str:
    return "|".join(escape(s) for s in items)


def split_list(field_text: str) -> tuple[str, ...]:
    if field_text == "":
        return ()
    return tuple(unescape(s) for s in field_text.split("|"))


def record(tag: str, *fields) -> str:
    parts = [tag]
    for f in fields:
        if isinstance(f, (list, tuple)):
            parts.append(join_list(f))
        else:
            parts.append(escape(str(f)))
    return "\t".join(parts)


def raw_records(text: str) -> list[list[str]]:
    """Split text into raw (still escaped) TAB-separated records, skipping fences."""
    out = []
    for line in text.replace("\r\n", "\n").split("\n"):
        line = line.lstrip()
        if not line or line.startswith("```"):
            continue
        out.append(line.split("\t"))
    return out


# ---------------------------------------------------------------------------
# Structured stage outputs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtractionItem:
    attribute: str
    value: str
    evidence: str


@dataclass(frozen=True)
class StructuredExtractionList:
    items: tuple[ExtractionItem, ...] = ()


@dataclass(frozen=True)
class AttributeGroup:
    center: str
    members: tuple[str, ...]


@dataclass(frozen=True)
class KeptGroup:
    side: str
    center: str
    indices: tuple[int, ...]


@dataclass(frozen=True)
class ContrastHint:
    attribute: str
    level: str
    hint: int


@dataclass(frozen=True)
class CritiqueRecord:
    kind: str
    target: str
    note: str


@dataclass(frozen=True)
class RevisedExtraction:
    attribute: str
    value: str
    evidence: str
    url: str


@dataclass(frozen=True)
class CellRecord:
    side: str
    value: str
    support: int
    urls: tuple[str, ...]
    evidence: tuple[str, ...]


@dataclass(frozen=True)
class RevisePatch:
    keep: bool = False
    delete: bool = False
    extractions: tuple[RevisedExtraction, ...] = ()
    cells: tuple[CellRecord, ...] = ()
    groups: tuple[AttributeGroup, ...] = ()


@dataclass(frozen=True)
class RowRecord:
    attribute: str
    level: str
    cells: tuple[CellRecord, ...] = ()
    dropped: bool = False


def _fail(stage, raw, reason="no records found"):
    raise ParseError(str(stage.value if isinstance(stage, StageTag) else stage), raw, reason)


def _nonblank(*fields: str) -> bool:
    return all(f.strip() for f in fields)


def _parse_cell(rec: list[str]) -> CellRecord | None:
    if len(rec) != 6 or rec[1] not in ("A", "B"):
        return None
    try:
        support = int(rec[3])
    except ValueError:
        return None
    urls, evs = split_list(rec[4]), split_list(rec[5])
    value = unescape(rec[2])
    if not value.strip() or len(urls) != len(evs) or support < 1:
        return None
    return CellRecord(rec[1], value, support, urls, evs)


def render_cell(c: CellRecord) -> str:
    return record("CELL", c.side, c.value, c.support, list(c.urls), list(c.evidence))


def _parse_rating(stage: StageTag, raw: str, labels: Sequence[str]) -> str:
    aliases = {"NO_SAME_ATTRIBUTE_ORTHOGONAL_VALUES": "NO_ORTHOGONAL_VALUES"}
    for m in re.finditer(r"RATING\s*:\s*([A-Za-z][A-Za-z _,\-]*)", raw):
        label = re.sub(r"[^A-Z]+", "_", m.group(1).upper()).strip("_")
        label = aliases.get(label, label)
        for cand in sorted(labels, key=len, reverse=True):
            if label == cand or label.startswith(cand + "_"):
                return cand
    _fail(stage, raw, "no RATING line with a known label")


def parse_stage_output(stage_tag: StageTag | str, raw: str):
    """Parse raw backend text for ``stage_tag`` into its structured value."""
    stage = StageTag(stage_tag)
    if not raw or not raw.strip():
        _fail(stage, raw, "empty output")
    if stage in (StageTag.USEFULNESS, StageTag.AUTORATE):
        labels = USEFULNESS_LABELS if stage is StageTag.USEFULNESS else AUTORATE_LABELS
        return _parse_rating(stage, raw, labels)

    recs = raw_records(raw)
    saw_none = any(r == [NONE] for r in recs)

    if stage is StageTag.EXTRACT:
        items = tuple(
            ExtractionItem(*(unescape(f) for f in r)) for r in recs
            if len(r) == 3 and _nonblank(*(unescape(f) for f in r))
        )
        if not items and not saw_none:
            _fail(stage, raw)
        return StructuredExtractionList(items)

    if stage is StageTag.ATTRIBUTE_MERGE:
        groups = []
        for r in recs:
            if len(r) == 3 and r[0] == "GROUP":
                center, members = unescape(r[1]), split_list(r[2])
                if center.strip() and members:
                    groups.append(AttributeGroup(center, members))
        if not groups and not saw_none:
            _fail(stage, raw)
        return tuple(groups)

    if stage is StageTag.VALUE_MERGE:
        kept = []
        for r in recs:
            if len(r) == 4 and r[0] == "KEEP" and r[1] in ("A", "B"):
                try:
                    idx = tuple(int(i) for i in r[3].split("|") if i != "")
                except ValueError:
                    continue
                if idx:
                    kept.append(KeptGroup(r[1], unescape(r[2]), idx))
        if not kept and not saw_none:
            _fail(stage, raw)
        return tuple(kept)

    if stage is StageTag.CONTRAST:
        hints = []
        for r in recs:
            if len(r) == 4 and r[0] == "CONTRAST" and r[2] in CONTRAST_LEVELS:
                try:
                    hints.append(ContrastHint(unescape(r[1]), r[2], int(r[3])))
                except ValueError:
                    continue
        if not hints:
            _fail(stage, raw)
        return tuple(hints)

    if stage is StageTag.CRITIQUE:
        out = tuple(
            CritiqueRecord(r[1], unescape(r[2]), unescape(r[3]))
            for r in recs
            if len(r) == 4 and r[0] == "CRITIQUE" and r[1] in CRITIQUE_KINDS
        )
        if not out and not saw_none:
            _fail(stage, raw)
        return out

    if stage is StageTag.REVISE:
        return _parse_revise(raw, recs)

    raise AssertionError(stage)


def _parse_revise(raw: str, recs: list[list[str]]) -> RevisePatch:
    keep = delete = False
    exs, cells, groups = [], [], []
    for r in recs:
        if r == ["KEEP"]:
            keep = True
        elif r == ["DELETE"]:
            delete = True
        elif r[0] == "EXTRACTION" and len(r) == 5:
            f = [unescape(x) for x in r[1:]]
            if _nonblank(*f):
                exs.append(RevisedExtraction(*f))
        elif r[0] == "CELL":
            c = _parse_cell(r)
            if c:
                cells.append(c)
        elif r[0] == "GROUP" and len(r) == 3:
            members = split_list(r[2])
            if members:
                groups.append(AttributeGroup(unescape(r[1]), members))
    if not (keep or delete or exs or cells or groups):
        _fail(StageTag.REVISE, raw)
    return RevisePatch(keep, delete, tuple(exs), tuple(cells), tuple(groups))


def render_stage_output(stage_tag: StageTag | str, value) -> str:
    """Inverse of :func:`parse_stage_output`."""
    stage = StageTag(stage_tag)
    if stage in (StageTag.USEFULNESS, StageTag.AUTORATE):
        return f"RATING: {value}"
    if stage is StageTag.EXTRACT:
        lines = ["\t".join([escape(i.attribute), escape(i.value), escape(i.evidence)]) for i in value.items]
    elif stage is StageTag.ATTRIBUTE_MERGE:
        lines = [record("GROUP", g.center, list(g.members)) for g in value]
    elif stage is StageTag.VALUE_MERGE:
        lines = [record("KEEP", g.side, g.center) + "\t" + "|".join(map(str, g.indices)) for g in value]
    elif stage is StageTag.CONTRAST:
        lines = [record("CONTRAST", h.attribute, h.level, h.hint) for h in value]
    elif stage is StageTag.CRITIQUE:
        lines = [record("CRITIQUE", c.kind, c.target, c.note) for c in value]
    elif stage is StageTag.REVISE:
        lines = []
        if value.keep:
            lines.append("KEEP")
        if value.delete:
            lines.append("DELETE")
        lines += [record("EXTRACTION", e.attribute, e.value, e.evidence, e.url) for e in value.extractions]
        lines += [render_cell(c) for c in value.cells]
        lines += [record("GROUP", g.center, list(g.members)) for g in value.groups]
    else:
        raise AssertionError(stage)
    return "\n".join(lines) if lines else NONE


# -- compare-task grammar (training targets) ----------------------------------

def render_compare(rows: Sequence[RowRecord]) -> str:
    lines = []
    for r in rows:
        if r.dropped:
            lines.append(record("DROP", r.attribute))
            continue
        lines.append(record("ROW", r.attribute, r.level))
        lines += [render_cell(c) for c in r.cells]
    return "\n".join(lines) if lines else NONE


def parse_compare(raw: str) -> tuple[RowRecord, ...]:
    if not raw or not raw.strip():
        _fail("COMPARE", raw, "empty output")
    rows: list[RowRecord] = []
    recs = raw_records(raw)
    for r in recs:
        if r[0] == "ROW" and len(r) == 3 and r[2] in CONTRAST_LEVELS:
            rows.append(RowRecord(unescape(r[1]), r[2]))
        elif r[0] == "DROP" and len(r) == 2:
            rows.append(RowRecord(unescape(r[1]), "NONE", dropped=True))
        elif r[0] == "CELL" and rows and not rows[-1].dropped:
            c = _parse_cell(r)
            if c:
                last = rows[-1]
                rows[-1] = RowRecord(last.attribute, last.level, last.cells + (c,))
    if not rows and [NONE] not in recs:
        _fail("COMPARE", raw)
    return tuple(rows)


# ---------------------------------------------------------------------------
# Stage inputs embedded in prompts
# ---------------------------------------------------------------------------

def wrap_block(payload: str) -> str:
    return f"{BLOCK_OPEN}\n{payload}\n{BLOCK_CLOSE}"


def extract_block(prompt: str) -> str:
    """Payload of the last input block in ``prompt`` ("" when there is none)."""
    end = prompt.rfind("\n" + BLOCK_CLOSE)
    start = prompt.rfind(BLOCK_OPEN + "\n", 0, end if end >= 0 else None)
    if start < 0 or end < 0:
        return ""
    return prompt[start + len(BLOCK_OPEN) + 1:end]


@dataclass
class PayloadRecords:
    """Parsed input payload: tagged records plus bare text lines in order."""

    records: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)

    def of(self, tag: str) -> list[tuple[str, ...]]:
        return [f for t, f in self.records if t == tag]

    def first(self, tag: str, default=None):
        found = self.of(tag)
        return found[0] if found else default


def parse_payload(payload: str) -> PayloadRecords:
    out = PayloadRecords()
    for line in payload.split("\n"):
        if not line:
            continue
        if "\t" not in line:
            out.records.append(("", (unescape(line),)))
            continue
        tag, *rest = line.split("\t")
        out.records.append((tag, tuple(rest)))
    return out


def field_text(f: str) -> str:
    return unescape(f)
