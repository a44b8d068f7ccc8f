"""Rule lexicon: normalization, synonym table, stop-lists and the value conflict relation.

The offline backend and the default evaluation oracles share these rules so
that their behaviour is reproducible without a model.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from importlib import resources
from typing import Iterable, Mapping

from .text import collapse_ws, nfc

_NON_WORD = re.compile(r"[^\w$%.]+")
_NUMBER = re.compile(r"(\$)?\s?(\d+(?:[.,]\d+)*)\s*(%|[a-z]+)?")


def singular(token: str) -> str:
    if len(token) > 4 and token.endswith("ies"):
        return token[:-3] + "y"
    if len(token) > 4 and token.endswith("sses"):
        return token[:-2]
    if len(token) > 3 and token.endswith("s") and not token.endswith(("ss", "us", "is")):
        return token[:-1]
    return token


def base_tokens(text: str) -> list[str]:
    """Casefolded word tokens with punctuation stripped (digits, $, % and dots kept)."""
    text = _NON_WORD.sub(" ", nfc(text).casefold())
    return [t.strip(".") for t in text.split() if t.strip(".")]


@dataclass(frozen=True)
class Lexicon:
    synonym_groups: tuple[tuple[str, ...], ...] = ()
    attribute_stoplist: frozenset[str] = frozenset()
    value_stoplist: frozenset[str] = frozenset()
    positive: frozenset[str] = frozenset()
    negative: frozenset[str] = frozenset()
    negators: frozenset[str] = frozenset()
    prepositions: frozenset[str] = frozenset()
    function_words: frozenset[str] = frozenset()
    conjunctions: tuple[str, ...] = ("and", ";", "while")
    entity_aliases: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "Lexicon":
        return cls(
            synonym_groups=tuple(tuple(g) for g in data.get("attribute_synonyms", ())),
            attribute_stoplist=frozenset(data.get("attribute_stoplist", ())),
            value_stoplist=frozenset(data.get("value_stoplist", ())),
            positive=frozenset(data.get("positive", ())),
            negative=frozenset(data.get("negative", ())),
            negators=frozenset(data.get("negators", ())),
            prepositions=frozenset(data.get("prepositions", ())),
            function_words=frozenset(data.get("function_words", ())),
            conjunctions=tuple(data.get("conjunctions", ("and", ";", "while"))),
            entity_aliases={k: tuple(v) for k, v in data.get("entity_aliases", {}).items()},
        )

    # -- attributes ---------------------------------------------------------

    @staticmethod
    def normalize_attribute(attribute: str) -> str:
        return " ".join(singular(t) for t in base_tokens(attribute))

    @cached_property
    def _synonyms(self) -> dict[str, str]:
        table = {}
        for group in self.synonym_groups:
            head = self.normalize_attribute(group[0])
            for member in group:
                table[self.normalize_attribute(member)] = head
        return table

    def attribute_key(self, attribute: str) -> str:
        """Identity of an attribute after normalization and the synonym table."""
        norm = self.normalize_attribute(attribute)
        return self._synonyms.get(norm, norm)

    @cached_property
    def _stop_attributes(self) -> frozenset[str]:
        return frozenset(self.normalize_attribute(s) for s in self.attribute_stoplist)

    def is_unhelpful_attribute(self, attribute: str) -> bool:
        return self.normalize_attribute(attribute) in self._stop_attributes

    # -- values -------------------------------------------------------------

    def value_key(self, value: str) -> str:
        toks = [singular(t) for t in base_tokens(value)]
        while toks and toks[0] in ("a", "an", "the"):
            toks = toks[1:]
        return " ".join(toks)

    def is_unhelpful_value(self, value: str) -> bool:
        return collapse_ws(nfc(value).casefold()).strip(" .") in self.value_stoplist

    @staticmethod
    def is_numeric(value: str) -> bool:
        return any(ch.isdigit() for ch in value)

    @staticmethod
    def lacks_context(value: str) -> bool:
        """Bare, context-free value such as "good" or "nice views"."""
        return len(value.split()) < 3 and not Lexicon.is_numeric(value)

    def _core(self, value: str) -> list[str]:
        core = []
        for t in base_tokens(value):
            if t in self.prepositions:
                break
            core.append(t)
        return core

    def head(self, value: str) -> str:
        """Head noun: last content word before the first preposition ("" when absent)."""
        for t in reversed(self._core(value)):
            if t.isalpha() and t not in self.positive and t not in self.negative \
                    and t not in self.function_words and t not in self.negators:
                return singular(t)
        return ""

    def polarity(self, value: str) -> int:
        score, flip = 0, False
        for t in base_tokens(value):
            if t in self.negators:
                flip = True
                continue
            s = 1 if t in self.positive else -1 if t in self.negative else 0
            if s:
                score += -s if flip else s
                flip = False
        return (score > 0) - (score < 0)

    @staticmethod
    def quantity(value: str) -> tuple[str, str] | None:
        """(number, unit) of the first quantity in ``value``, or None."""
        m = _NUMBER.search(nfc(value).casefold())
        if not m:
            return None
        unit = "$" if m.group(1) else singular(m.group(3) or "")
        return m.group(2).replace(",", ""), unit

    def conflicts(self, a: str, b: str) -> bool:
        """True when two values for the same entity and attribute contradict each other."""
        qa, qb = self.quantity(a), self.quantity(b)
        if qa and qb and qa[1] == qb[1] and qa[0] != qb[0]:
            return True
        pa, pb = self.polarity(a), self.polarity(b)
        return pa != 0 and pb != 0 and pa != pb and self.head(a) == self.head(b)

    def compatible(self, a: str, b: str) -> bool:
        return not self.conflicts(a, b)

    def redundant_values(self, a: str, b: str) -> bool:
        """One value restates the other ("backpack" vs "travel backpack")."""
        ka, kb = self.value_key(a).split(), self.value_key(b).split()
        if not ka or not kb:
            return False
        short, long_ = (ka, kb) if len(ka) <= len(kb) else (kb, ka)
        n = len(short)
        return any(long_[i:i + n] == short for i in range(len(long_) - n + 1))

    def conjunction_count(self, value: str) -> int:
        low = nfc(value).casefold()
        n = low.count(";")
        words = [w for w in self.conjunctions if w != ";"]
        for w in words:
            n += len(re.findall(rf"(?<!\w){re.escape(w)}(?!\w)", low))
        return n

    # -- entities -----------------------------------------------------------

    def alias_table(self, extra: Iterable[tuple[str, Iterable[str]]] = ()) -> dict[str, tuple[str, ...]]:
        table = {k: tuple(v) for k, v in self.entity_aliases.items()}
        for name, aliases in extra:
            table[name] = tuple(dict.fromkeys([name, *table.get(name, ()), *aliases]))
        return table


def entity_mentions(text: str, alias_table: Mapping[str, Iterable[str]]) -> set[str]:
    """Canonical entity names mentioned in ``text``; longest alias wins at each position."""
    pairs = sorted(
        ((alias, name) for name, aliases in alias_table.items() for alias in {name, *aliases} if alias),
        key=lambda p: (-len(p[0]), p[0]),
    )
    if not pairs:
        return set()
    lookup = {}
    for alias, name in pairs:
        lookup.setdefault(alias.casefold(), name)
    rx = _alias_regex(tuple(alias for alias, _ in pairs))
    return {lookup[m.group(1).casefold()] for m in rx.finditer(nfc(text))}


@lru_cache(maxsize=256)
def _alias_regex(aliases: tuple[str, ...]) -> re.Pattern:
    alt = "|".join(re.escape(nfc(a)) for a in aliases)
    return re.compile(rf"(?<!\w)({alt})(?!\w)", re.IGNORECASE)


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    data = json.loads(resources.files("abcompare.data").joinpath("lexicon.json").read_text("utf-8"))
    return Lexicon.from_dict(data)
