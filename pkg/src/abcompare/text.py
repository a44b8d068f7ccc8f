"""Text normalization, tokenization and digests."""

from __future__ import annotations

import hashlib
import json
import re
import unicodedata
from typing import Protocol

_WS = re.compile(r"\s+")


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def collapse_ws(text: str) -> str:
    return _WS.sub(" ", text).strip()


def fold_key(text: str) -> str:
    """Key used for case-insensitive identity of attribute names."""
    return collapse_ws(nfc(text)).casefold()


def contains_verbatim(haystack: str, needle: str) -> bool:
    """Exact substring test after NFC normalization of both sides."""
    return bool(needle) and nfc(needle) in nfc(haystack)


class Tokenizer(Protocol):
    def count(self, text: str) -> int: ...

    def spans(self, text: str) -> list[tuple[int, int]]:
        """(start, end) character spans of each token."""
        ...


class WhitespaceTokenizer:
    """Counts whitespace-delimited tokens. Upper-bound-consistent stand-in for a model tokenizer."""

    name = "whitespace"
    _TOKEN = re.compile(r"\S+")

    def count(self, text: str) -> int:
        return len(text.split())

    def spans(self, text: str) -> list[tuple[int, int]]:
        return [m.span() for m in self._TOKEN.finditer(text)]


DEFAULT_TOKENIZER = WhitespaceTokenizer()


def count_tokens(text: str, tokenizer: Tokenizer | None = None) -> int:
    return (tokenizer or DEFAULT_TOKENIZER).count(text)


def digest(payload, length: int = 16) -> str:
    """Stable hex digest of a string or JSON-serializable value."""
    if not isinstance(payload, (str, bytes)):
        payload = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:length]
