"""Deterministic rule-based backend.

Reads the input block embedded in a prompt and answers in the stage output
grammar using the lexicon rules, so the whole pipeline can run offline.  The
response is a pure function of ``(stage_tag, prompt)``.
"""

from __future__ import annotations

import re
from collections import OrderedDict
from typing import Sequence

from ..lexicon import Lexicon, default_lexicon, entity_mentions
from ..text import fold_key
from . import grammar as g
from .grammar import (
    AttributeGroup,
    CellRecord,
    ContrastHint,
    CritiqueRecord,
    ExtractionItem,
    KeptGroup,
    RevisedExtraction,
    RevisePatch,
    StructuredExtractionList,
    parse_payload,
    render_stage_output,
    split_list,
    unescape,
)
from .types import CompletionRequest, CompletionResult, StageTag

LONG_CLAIM_TOKENS = 25
MAX_CONTEXT_CANDIDATES = 20

_PAT_OF = re.compile(r"^The (?P<attr>\S.*?) of (?P<ent>\S.*?) (?:is|are) (?P<val>\S.*?)[.!?\"')\]]*$")
_PAT_POSS = re.compile(r"^(?P<ent>\S.*?)['’]s (?P<attr>\S.*?) (?:is|are) (?P<val>\S.*?)[.!?\"')\]]*$")
_CLAIM_SEP = re.compile(r"\s*;\s*|,\s+(?:(?:and|while)\s+)?|\s+(?:and|while)\s+", re.IGNORECASE)


def match_sentence(sentence: str) -> tuple[str, str, str] | None:
    """(attribute, entity mention, value) for sentences in one of the two extraction patterns."""
    for pat in (_PAT_OF, _PAT_POSS):
        m = pat.match(sentence.strip())
        if m:
            return m.group("attr"), m.group("ent"), m.group("val")
    return None


def split_claims(value: str, lexicon: Lexicon, limit: int = LONG_CLAIM_TOKENS) -> list[str]:
    """Break a long value into atomic verbatim pieces.

    Splits at ';', commas and the words "and"/"while"; a fragment shorter than
    three tokens is re-attached to its predecessor when that keeps at most one
    conjunction in the piece.  Pieces still above ``limit`` tokens are cut into
    token windows.
    """
    spans = []
    pos = 0
    for m in _CLAIM_SEP.finditer(value):
        spans.append((pos, m.start()))
        pos = m.end()
    spans.append((pos, len(value)))
    spans = [_trim(value, a, b) for a, b in spans]
    spans = [(a, b) for a, b in spans if b > a]

    merged: list[tuple[int, int]] = []
    for a, b in spans:
        if merged and len(value[a:b].split()) < 3:
            pa, _ = merged[-1]
            if lexicon.conjunction_count(value[pa:b]) <= 1:
                merged[-1] = (pa, b)
                continue
        elif len(merged) == 1 and len(value[merged[0][0]:merged[0][1]].split()) < 3:
            # a short leading fragment joins the piece after it
            pa, _ = merged[0]
            if lexicon.conjunction_count(value[pa:b]) <= 1:
                merged[0] = (pa, b)
                continue
        merged.append((a, b))

    out = []
    for a, b in merged:
        piece = value[a:b]
        toks = [m.span() for m in re.finditer(r"\S+", piece)]
        if len(toks) <= limit:
            out.append(piece)
            continue
        for i in range(0, len(toks), limit):
            chunk = toks[i:i + limit]
            out.append(piece[chunk[0][0]:chunk[-1][1]])
    return out


def _trim(text: str, a: int, b: int) -> tuple[int, int]:
    while a < b and (text[a].isspace() or text[a] in ",;:"):
        a += 1
    while b > a and (text[b - 1].isspace() or text[b - 1] in ".,;:!?"):
        b -= 1
    return a, b


def _strip_terminal(sentence: str) -> str:
    return sentence.strip().rstrip(".!?").rstrip()


class DeterministicBackend:
    """Offline backend applying the lexicon rules; safe to call from any thread."""

    backend_id = "det-v1"

    def __init__(self, lexicon: Lexicon | None = None):
        self.lexicon = lexicon or default_lexicon()

    def complete(self, req: CompletionRequest) -> CompletionResult:
        return CompletionResult(self.respond(req.stage_tag, req.prompt), 0, self.backend_id)

    def respond(self, stage_tag: StageTag, prompt: str) -> str:
        stage = StageTag(stage_tag)
        payload = parse_payload(g.extract_block(prompt))
        handler = getattr(self, f"_{stage.value.lower()}")
        return handler(payload)

    # -- shared helpers -------------------------------------------------------

    @staticmethod
    def _entities(p: g.PayloadRecords) -> tuple[dict[str, str], dict[str, tuple[str, ...]]]:
        """(role -> name, alias table) from ENTITY and KNOWN records."""
        roles, table = {}, {}
        for f in p.of("ENTITY"):
            role, name = f[0], unescape(f[1])
            roles[role] = name
            table[name] = (name, *split_list(f[2])) if len(f) > 2 else (name,)
        for f in p.of("KNOWN"):
            name = unescape(f[0])
            table.setdefault(name, (name, *split_list(f[1])) if len(f) > 1 else (name,))
        return roles, table

    def _foreign(self, text: str, own: str, table) -> set[str]:
        return {m for m in entity_mentions(text, table) if m != own}

    @staticmethod
    def _rows(p: g.PayloadRecords) -> list[tuple[str, tuple[str, ...], list[CellRecord]]]:
        """ROW records with their following CELL records."""
        rows = []
        for tag, f in p.records:
            if tag == "ROW":
                members = split_list(f[1]) if len(f) > 1 else ()
                rows.append((unescape(f[0]), members, []))
            elif tag == "CELL" and rows:
                c = g._parse_cell(["CELL", *f])
                if c:
                    rows[-1][2].append(c)
        return rows

    # -- LM stages ------------------------------------------------------------

    def _extract(self, p: g.PayloadRecords) -> str:
        items = []
        for tag, f in p.records:
            if tag != "":
                continue
            sentence = f[0]
            m = match_sentence(sentence)
            if m:
                attr, _, value = m
                items.append(ExtractionItem(attr.strip(), value.strip(), sentence))
        return render_stage_output(StageTag.EXTRACT, StructuredExtractionList(tuple(items)))

    def group_attributes(self, attributes: Sequence[str]) -> list[AttributeGroup]:
        groups: OrderedDict[str, list[str]] = OrderedDict()
        seen = set()
        for a in attributes:
            if fold_key(a) in seen:
                continue
            seen.add(fold_key(a))
            groups.setdefault(self.lexicon.attribute_key(a), []).append(a)
        return [AttributeGroup(min(ms, key=lambda s: (len(s), s)), tuple(ms)) for ms in groups.values()]

    def _attribute_merge(self, p: g.PayloadRecords) -> str:
        attrs = [unescape(f[0]) for f in p.of("ATTR")]
        return render_stage_output(StageTag.ATTRIBUTE_MERGE, self.group_attributes(attrs))

    def _value_merge(self, p: g.PayloadRecords) -> str:
        threshold = float(p.first("THRESHOLD", ("0.5",))[0])
        kept: list[KeptGroup] = []
        for side in ("A", "B"):
            values = [(int(f[1]), unescape(f[2])) for f in p.of("VALUE") if f[0] == side]
            kept += self.merge_values(side, values, threshold)
        return render_stage_output(StageTag.VALUE_MERGE, kept)

    def merge_values(self, side: str, values: Sequence[tuple[int, str]], threshold: float) -> list[KeptGroup]:
        lex = self.lexicon
        groups: OrderedDict[str, list[tuple[int, str]]] = OrderedDict()
        for idx, v in values:
            groups.setdefault(lex.value_key(v), []).append((idx, v))
        members = list(groups.values())
        dropped: set[int] = set()
        order = sorted(range(len(members)), key=lambda i: (-len(members[i]), i))
        for gi in order:
            if gi in dropped:
                continue
            rep = members[gi][0][1]
            rivals = [h for h in range(len(members))
                      if h != gi and h not in dropped and lex.conflicts(rep, members[h][0][1])]
            if not rivals:
                continue
            total = len(members[gi]) + sum(len(members[h]) for h in rivals)
            if len(members[gi]) / total > threshold:
                dropped.update(rivals)
        return [
            KeptGroup(side, ms[0][1], tuple(i for i, _ in ms))
            for gi, ms in enumerate(members) if gi not in dropped
        ]

    def contrast_level(self, values_a: Sequence[str], values_b: Sequence[str]) -> str:
        ka = {self.lexicon.value_key(v) for v in values_a}
        kb = {self.lexicon.value_key(v) for v in values_b}
        if ka == kb:
            return "NONE"
        if ka and kb and not ka & kb:
            return "HIGH"
        return "LOW"

    def _contrast(self, p: g.PayloadRecords) -> str:
        hints = []
        current = None
        vals: dict[str, list[tuple[str, int]]] = {}
        rows = []
        for tag, f in p.records:
            if tag == "ROW":
                current = unescape(f[0])
                vals = {"A": [], "B": []}
                rows.append((current, vals))
            elif tag == "VAL" and current is not None:
                vals[f[0]].append((unescape(f[1]), int(f[2])))
        for attr, v in rows:
            level = self.contrast_level([x for x, _ in v["A"]], [x for x, _ in v["B"]])
            hints.append(ContrastHint(attr, level, sum(s for _, s in v["A"] + v["B"])))
        return render_stage_output(StageTag.CONTRAST, hints)

    def _usefulness(self, p: g.PayloadRecords) -> str:
        attr = unescape(p.first("ROW", ("",))[0])
        values = [unescape(f[1]) for f in p.of("VAL")]
        useless = self.lexicon.is_unhelpful_attribute(attr) or (
            values and all(self.lexicon.is_unhelpful_value(v) for v in values)
        )
        return render_stage_output(StageTag.USEFULNESS, "NO" if useless else "YES")

    # -- autorater ------------------------------------------------------------

    def rate_row(self, attr: str, cells: Sequence[CellRecord], roles: dict[str, str], table) -> str:
        lex = self.lexicon
        by_side = {s: [c for c in cells if c.side == s] for s in ("A", "B")}
        if lex.is_unhelpful_attribute(attr):
            return "NO_BAD_EXTRACTION"
        for side, cs in by_side.items():
            for c in cs:
                tokens = len(c.value.split())
                if lex.lacks_context(c.value) or tokens > LONG_CLAIM_TOKENS or lex.is_unhelpful_value(c.value):
                    return "NO_BAD_EXTRACTION"
                if not any(c.value in ev for ev in c.evidence):
                    return "NO_BAD_EXTRACTION"
                own = roles.get(side, "")
                if any(self._foreign(ev, own, table) for ev in c.evidence):
                    return "NO_BAD_EXTRACTION"
        for cs in by_side.values():
            vals = [c.value for c in cs]
            if any(lex.conflicts(a, b) for i, a in enumerate(vals) for b in vals[i + 1:]):
                return "NO_INCONSISTENT_VALUES"
        for cs in by_side.values():
            vals = [c.value for c in cs]
            if any(lex.redundant_values(a, b) for i, a in enumerate(vals) for b in vals[i + 1:]):
                return "NO_UNDERMERGED_VALUES"
        if self.orthogonal(by_side["A"], by_side["B"]):
            return "NO_ORTHOGONAL_VALUES"
        if not by_side["A"] or not by_side["B"]:
            return "OK"
        return "YES"

    def orthogonal(self, cells_a, cells_b) -> str | None:
        """Side holding only descriptive values while the other holds only quantities."""
        if not cells_a or not cells_b:
            return None
        num = self.lexicon.is_numeric
        a_num = [num(c.value) for c in cells_a]
        b_num = [num(c.value) for c in cells_b]
        if all(a_num) and not any(b_num):
            return "B"
        if all(b_num) and not any(a_num):
            return "A"
        return None

    def _autorate(self, p: g.PayloadRecords) -> str:
        roles, table = self._entities(p)
        rows = self._rows(p)
        if not rows:
            return "RATING: OK"
        attr, _, cells = rows[0]
        return f"RATING: {self.rate_row(attr, cells, roles, table)}"

    # -- critique -------------------------------------------------------------

    def _critique(self, p: g.PayloadRecords) -> str:
        scope = p.first("SCOPE", ("EXTRACT",))[0]
        roles, table = self._entities(p)
        lex = self.lexicon
        out: list[CritiqueRecord] = []
        if scope == "EXTRACT":
            own = roles.get("SELF", "")
            exs = [tuple(unescape(x) for x in f) for f in p.of("EXTRACTION")]
            for kind in g.CRITIQUE_KINDS[:3]:
                for xid, attr, value, evidence, _url in exs:
                    if kind == "INSUFFICIENT_CONTEXT" and lex.lacks_context(value) \
                            and not lex.is_unhelpful_value(value) and not lex.is_unhelpful_attribute(attr):
                        out.append(CritiqueRecord(kind, xid, f"value {value!r} lacks context for {attr!r}"))
                    elif kind == "WRONG_ENTITY":
                        foreign = self._foreign(evidence, own, table)
                        if foreign:
                            out.append(CritiqueRecord(kind, xid, "evidence names " + ", ".join(sorted(foreign))))
                    elif kind == "UNHELPFUL_ATTRIBUTE_EXTRACT" and lex.is_unhelpful_attribute(attr):
                        out.append(CritiqueRecord(kind, xid, f"attribute {attr!r} is not helpful"))
            return render_stage_output(StageTag.CRITIQUE, out)

        rows = self._rows(p)
        for kind in g.CRITIQUE_KINDS[3:]:
            seen_keys: dict[str, str] = {}
            for attr, members, cells in rows:
                a = [c for c in cells if c.side == "A"]
                b = [c for c in cells if c.side == "B"]
                if kind == "ORTHOGONAL_VALUES":
                    side = self.orthogonal(a, b)
                    if side:
                        out.append(CritiqueRecord(kind, attr, f"side {side} values do not align"))
                elif kind == "INCONSISTENT_VALUES":
                    for side, cs in (("A", a), ("B", b)):
                        vals = [c.value for c in cs]
                        pairs = [(x, y) for i, x in enumerate(vals) for y in vals[i + 1:] if lex.conflicts(x, y)]
                        if pairs:
                            out.append(CritiqueRecord(kind, attr, f"side {side}: {pairs[0][0]!r} vs {pairs[0][1]!r}"))
                            break
                elif kind == "UNHELPFUL_ATTRIBUTE_OR_VALUE":
                    if lex.is_unhelpful_attribute(attr):
                        out.append(CritiqueRecord(kind, attr, "attribute is not helpful"))
                    elif any(lex.is_unhelpful_value(c.value) for c in cells):
                        out.append(CritiqueRecord(kind, attr, "row shows an unhelpful value"))
                elif kind == "UNDER_OR_OVER_MERGED":
                    key = lex.attribute_key(attr)
                    if key in seen_keys:
                        out.append(CritiqueRecord(kind, attr, f"under-merged with {seen_keys[key]!r}"))
                    else:
                        seen_keys[key] = attr
                        stray = [m for m in members if lex.attribute_key(m) != key]
                        if stray:
                            out.append(CritiqueRecord(kind, attr, "over-merged members: " + ", ".join(stray)))
                elif kind == "LONG_COMPLEX_CLAIM":
                    if any(len(c.value.split()) > LONG_CLAIM_TOKENS for c in cells):
                        out.append(CritiqueRecord(kind, attr, "value is a long complex claim"))
        return render_stage_output(StageTag.CRITIQUE, out)

    # -- revision -------------------------------------------------------------

    def _revise(self, p: g.PayloadRecords) -> str:
        kind = p.first("KIND", ("",))[0]
        handler = getattr(self, f"_revise_{kind.lower()}", None)
        patch = handler(p) if handler else RevisePatch(keep=True)
        return render_stage_output(StageTag.REVISE, patch)

    def _revise_insufficient_context(self, p) -> RevisePatch:
        roles, table = self._entities(p)
        own = roles.get("SELF", "")
        _xid, attr, value, evidence, url = (unescape(x) for x in p.first("EXTRACTION"))
        lex = self.lexicon
        wanted = {t for t in lex.attribute_key(attr).split() + lex.normalize_attribute(attr).split()
                  if t not in lex.function_words and t not in lex.prepositions}
        for f in p.of("CONTEXT")[:MAX_CONTEXT_CANDIDATES]:
            ctx_url, sentence = unescape(f[0]), unescape(f[1])
            if sentence.strip() == evidence.strip():
                continue
            toks = set(lex.normalize_attribute(sentence).split())
            candidate = _strip_terminal(sentence)
            if wanted & toks and not lex.lacks_context(candidate) and not self._foreign(sentence, own, table):
                return RevisePatch(extractions=(RevisedExtraction(attr, candidate, sentence, ctx_url),))
        fallback = _strip_terminal(evidence)
        if not lex.lacks_context(fallback) and fallback != value:
            return RevisePatch(extractions=(RevisedExtraction(attr, fallback, evidence, url),))
        return RevisePatch(delete=True)

    def _revise_wrong_entity(self, p) -> RevisePatch:
        return RevisePatch(delete=True)

    def _revise_unhelpful_attribute_extract(self, p) -> RevisePatch:
        return RevisePatch(delete=True)

    def _pool_cells(self, p, side: str, numeric: bool) -> list[CellRecord]:
        grouped: OrderedDict[str, list[tuple[str, str, str]]] = OrderedDict()
        for f in p.of("POOL"):
            if f[0] != side:
                continue
            _attr, value, url, ev = (unescape(x) for x in f[1:5])
            if self.lexicon.is_numeric(value) == numeric:
                grouped.setdefault(self.lexicon.value_key(value), []).append((value, url, ev))
        cells = []
        for items in grouped.values():
            urls = OrderedDict()
            for _, url, ev in items:
                urls.setdefault(url, ev)
            cells.append(CellRecord(side, items[0][0], len(items), tuple(urls), tuple(urls.values())))
        return cells

    def _revise_orthogonal_values(self, p) -> RevisePatch:
        rows = self._rows(p)
        if not rows:
            return RevisePatch(keep=True)
        _, _, cells = rows[0]
        a = [c for c in cells if c.side == "A"]
        b = [c for c in cells if c.side == "B"]
        side = self.orthogonal(a, b)
        if side is None:
            return RevisePatch(keep=True)
        other = "B" if side == "A" else "A"
        cells_by_side = {"A": a, "B": b}
        realigned = self._pool_cells(p, side, numeric=True)
        if realigned:
            cells_by_side[side] = realigned
            return RevisePatch(cells=tuple(cells_by_side["A"] + cells_by_side["B"]))
        realigned = self._pool_cells(p, other, numeric=False)
        if realigned:
            cells_by_side[other] = realigned
            return RevisePatch(cells=tuple(cells_by_side["A"] + cells_by_side["B"]))
        return RevisePatch(delete=True)

    def _revise_inconsistent_values(self, p) -> RevisePatch:
        rows = self._rows(p)
        if not rows:
            return RevisePatch(keep=True)
        ranks = {(f[0], unescape(f[1])): int(f[2]) for f in p.of("DOC")}
        _, _, cells = rows[0]
        lex = self.lexicon
        changed = False
        result = []
        for side in ("A", "B"):
            cs = [c for c in cells if c.side == side]
            while True:
                involved = {
                    i for i, x in enumerate(cs) for j, y in enumerate(cs)
                    if i != j and lex.conflicts(x.value, y.value)
                }
                if not involved:
                    break

                def weakness(i):
                    c = cs[i]
                    best = min((ranks.get((side, u), 10**6) for u in c.urls), default=10**6)
                    return (c.support, -best)

                # lowest support, then worst best-rank, then larger value key
                cands = sorted(involved, key=lambda i: lex.value_key(cs[i].value), reverse=True)
                cs.pop(min(cands, key=weakness))
                changed = True
            result += cs
        if not changed:
            return RevisePatch(keep=True)
        return RevisePatch(cells=tuple(result)) if result else RevisePatch(delete=True)

    def _revise_unhelpful_attribute_or_value(self, p) -> RevisePatch:
        rows = self._rows(p)
        if not rows:
            return RevisePatch(keep=True)
        attr, _, cells = rows[0]
        if self.lexicon.is_unhelpful_attribute(attr):
            return RevisePatch(delete=True)
        kept = [c for c in cells if not self.lexicon.is_unhelpful_value(c.value)]
        if len(kept) == len(cells):
            return RevisePatch(keep=True)
        return RevisePatch(cells=tuple(kept)) if kept else RevisePatch(delete=True)

    def _revise_under_or_over_merged(self, p) -> RevisePatch:
        members = []
        for attr, ms, _ in self._rows(p):
            members += list(ms) or [attr]
        return RevisePatch(groups=tuple(self.group_attributes(members)))

    def _revise_long_complex_claim(self, p) -> RevisePatch:
        rows = self._rows(p)
        if not rows:
            return RevisePatch(keep=True)
        _, _, cells = rows[0]
        out: list[CellRecord] = []
        changed = False
        for c in cells:
            if len(c.value.split()) <= LONG_CLAIM_TOKENS:
                out.append(c)
                continue
            changed = True
            seen = {self.lexicon.value_key(x.value) for x in out if x.side == c.side}
            for piece in split_claims(c.value, self.lexicon):
                key = self.lexicon.value_key(piece)
                if key and key not in seen:
                    seen.add(key)
                    out.append(CellRecord(c.side, piece, c.support, c.urls, c.evidence))
        if not changed:
            return RevisePatch(keep=True)
        return RevisePatch(cells=tuple(out)) if out else RevisePatch(delete=True)
