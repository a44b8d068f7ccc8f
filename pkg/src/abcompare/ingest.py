"""Corpus loading, essential-sentence extraction and token-budgeted tiling."""

from __future__ import annotations

import hashlib
import html
import json
import logging
import re
import warnings
from dataclasses import dataclass, field, replace
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CorpusError
from .lexicon import Lexicon, default_lexicon
from .model import Entity, Sentence, SourceDocument, Tile, TokenBudget
from .text import DEFAULT_TOKENIZER, Tokenizer, contains_verbatim, digest

log = logging.getLogger(__name__)

MIN_SENTENCE_TOKENS = 4
MAX_NON_ALPHA_RATIO = 0.5
RECOMMENDED_DOCS = (5, 20)

_SENTENCE_END = re.compile(r"[.!?]+[\"')\]]*(?=\s|$)|\n")


class TilingWarning(UserWarning):
    pass


class CorpusSizeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Manifest:
    entities: tuple[Entity, ...]
    documents: tuple[SourceDocument, ...]
    path: Path | None = None

    def entity(self, ref: str) -> Entity:
        """Look an entity up by id or display name (case-insensitive)."""
        low = ref.casefold()
        for e in self.entities:
            if e.id.casefold() == low or any(n.casefold() == low for n in e.names):
                return e
        raise CorpusError(f"entity {ref!r} is not in the corpus")

    def documents_for(self, entity_id: str) -> list[SourceDocument]:
        return [d for d in self.documents if d.entity_id == entity_id]

    @property
    def digest(self) -> str:
        return digest([[d.entity_id, d.url, d.search_rank, d.raw_text] for d in self.documents])

    def to_dict(self) -> dict:
        """Self-contained manifest with inline text (used to snapshot a run's corpus)."""
        return {
            "entities": [
                {
                    "id": e.id,
                    "display_name": e.display_name,
                    "aliases": list(e.aliases),
                    "documents": [
                        {"url": d.url, "search_rank": d.search_rank, "text": d.raw_text}
                        for d in self.documents_for(e.id)
                    ],
                }
                for e in self.entities
            ]
        }


def read_manifest(path: str | Path, fetcher: "UrlFetcher | None" = None) -> Manifest:
    """Parse a corpus manifest (see README for the schema)."""
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus manifest not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"corpus manifest is not valid JSON: {exc}") from exc
    return parse_manifest(data, base_dir=path.parent, fetcher=fetcher, path=path)


def parse_manifest(data, *, base_dir: Path | None = None, fetcher=None, path=None) -> Manifest:
    if not isinstance(data, dict) or not isinstance(data.get("entities"), list):
        raise CorpusError("manifest must be an object with an 'entities' array")
    entities, documents, ids = [], [], set()
    for i, ent in enumerate(data["entities"]):
        try:
            entity = Entity(
                id=str(ent["id"]),
                display_name=str(ent.get("display_name", ent["id"])),
                aliases=tuple(ent.get("aliases", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"malformed entity entry #{i}: {exc}") from exc
        if entity.id in ids:
            raise CorpusError(f"duplicate entity id {entity.id!r}")
        ids.add(entity.id)
        entities.append(entity)
        urls = set()
        docs = []
        for j, entry in enumerate(ent.get("documents", [])):
            where = f"entity {entity.id!r} document #{j}"
            if not isinstance(entry, dict) or not entry.get("url"):
                raise CorpusError(f"malformed document entry ({where}): missing url")
            url = str(entry["url"])
            if url in urls:
                raise CorpusError(f"duplicate URL {url!r} for entity {entity.id!r}")
            urls.add(url)
            rank = entry.get("search_rank")
            if not isinstance(rank, int) or isinstance(rank, bool) or rank < 1:
                raise CorpusError(f"malformed document entry ({where}): search_rank must be an integer >= 1")
            text = _document_text(entry, base_dir, fetcher, where)
            docs.append(SourceDocument(url=url, entity_id=entity.id, search_rank=rank, raw_text=text))
        docs.sort(key=lambda d: d.search_rank)
        documents.extend(docs)
    if not documents:
        raise CorpusError("no documents in corpus manifest")
    return Manifest(tuple(entities), tuple(documents), path)


def _document_text(entry: dict, base_dir, fetcher, where: str) -> str:
    if "text" in entry:
        text = entry["text"]
    elif "text_file" in entry:
        p = Path(entry["text_file"])
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise CorpusError(f"cannot read text_file ({where}): {exc}") from exc
    elif fetcher is not None:
        text = fetcher.fetch_text(entry["url"])
    else:
        raise CorpusError(f"malformed document entry ({where}): needs 'text' or 'text_file'")
    if not isinstance(text, str):
        raise CorpusError(f"malformed document entry ({where}): text must be a string")
    return text


def load_corpus(path: str | Path, fetcher: "UrlFetcher | None" = None) -> list[SourceDocument]:
    """Load every document of a manifest, grouped per entity in search-rank order."""
    manifest = read_manifest(path, fetcher)
    check_corpus_size(manifest)
    return list(manifest.documents)


def check_corpus_size(manifest: Manifest) -> None:
    lo, hi = RECOMMENDED_DOCS
    for e in manifest.entities:
        n = len(manifest.documents_for(e.id))
        if n == 0:
            raise CorpusError(f"entity {e.id!r} has no documents")
        if not lo <= n <= hi:
            warnings.warn(f"entity {e.id!r} has {n} documents (recommended {lo}-{hi})", CorpusSizeWarning)


# ---------------------------------------------------------------------------
# Essential sentences
# ---------------------------------------------------------------------------

def split_sentences(text: str) -> list[tuple[int, str]]:
    """(offset, sentence) pairs, splitting at terminal punctuation and line breaks."""
    out = []
    pos = 0

    def emit(start: int, end: int):
        chunk = text[start:end]
        stripped = chunk.strip()
        if stripped:
            out.append((start + len(chunk) - len(chunk.lstrip()), stripped))

    for m in _SENTENCE_END.finditer(text):
        emit(pos, m.start() if m.group() == "\n" else m.end())
        pos = m.end()
    emit(pos, len(text))
    return out


def _mostly_non_alpha(text: str) -> bool:
    chars = [c for c in text if not c.isspace()]
    if not chars:
        return True
    return sum(not c.isalpha() for c in chars) / len(chars) > MAX_NON_ALPHA_RATIO


def extract_essential_sentences(doc: SourceDocument, tokenizer: Tokenizer | None = None) -> list[Sentence]:
    """Sentences that survive the boilerplate filter, in document order."""
    if not doc.raw_text.strip():
        raise ValueError(f"document {doc.url} has no text")
    tok = tokenizer or DEFAULT_TOKENIZER
    seen = set()
    out = []
    for offset, text in split_sentences(doc.raw_text):
        n = tok.count(text)
        if n < MIN_SENTENCE_TOKENS or _mostly_non_alpha(text) or text in seen:
            continue
        seen.add(text)
        out.append(Sentence(text=text, doc_url=doc.url, char_offset=offset, token_count=n))
    return out


def with_sentences(doc: SourceDocument, tokenizer: Tokenizer | None = None) -> SourceDocument:
    if not doc.raw_text.strip():
        return replace(doc, essential_sentences=())
    return replace(doc, essential_sentences=tuple(extract_essential_sentences(doc, tokenizer)))


# ---------------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------------

def split_oversized(sentence: Sentence, limit: int, tokenizer: Tokenizer | None = None) -> list[Sentence]:
    """Cut a sentence at token boundaries into fragments of at most ``limit`` tokens.

    Fragments are contiguous slices, so concatenating them gives back the sentence.
    """
    tok = tokenizer or DEFAULT_TOKENIZER
    spans = tok.spans(sentence.text)
    starts = [spans[i][0] for i in range(0, len(spans), limit)]
    starts[0] = 0
    bounds = starts + [len(sentence.text)]
    out = []
    for a, b in zip(bounds, bounds[1:]):
        piece = sentence.text[a:b]
        out.append(Sentence(piece, sentence.doc_url, sentence.char_offset + a, tok.count(piece)))
    return out


def tile(
    sentences: Sequence[Sentence],
    budget: TokenBudget,
    *,
    entity_id: str = "",
    tokenizer: Tokenizer | None = None,
    notes: list[str] | None = None,
) -> list[Tile]:
    """Pack sentences, in order, into tiles of at most ``budget.effective`` tokens.

    Packing is sequential: a sentence goes into the open tile if it fits,
    otherwise a new tile is started. Sentences are never reordered.
    """
    limit = budget.effective
    if limit <= 0:
        raise ValueError("budget.effective must be positive")
    tiles: list[Tile] = []
    current: list[Sentence] = []
    total = 0

    def flush():
        nonlocal current, total
        if current:
            tid = f"{entity_id or 'tile'}-t{len(tiles):04d}"
            tiles.append(Tile(tid, entity_id, tuple(current), total))
        current, total = [], 0

    for s in sentences:
        pieces = [s]
        if s.token_count > limit:
            msg = f"sentence at {s.doc_url}:{s.char_offset} has {s.token_count} tokens > budget {limit}; split"
            warnings.warn(msg, TilingWarning)
            if notes is not None:
                notes.append(msg)
            pieces = split_oversized(s, limit, tokenizer)
        for p in pieces:
            if total + p.token_count > limit:
                flush()
            current.append(p)
            total += p.token_count
    flush()
    return tiles


def tile_entity(docs: Iterable[SourceDocument], budget: TokenBudget, entity_id: str,
                tokenizer: Tokenizer | None = None, notes: list[str] | None = None) -> list[Tile]:
    """Tile the essential sentences of one entity's documents in (rank, offset) order."""
    ordered = sorted((d for d in docs if d.entity_id == entity_id), key=lambda d: d.search_rank)
    sentences = [s for d in ordered for s in d.essential_sentences]
    return tile(sentences, budget, entity_id=entity_id, tokenizer=tokenizer, notes=notes)


# ---------------------------------------------------------------------------
# Source index
# ---------------------------------------------------------------------------

@dataclass
class SourceIndex:
    """Read-only lookups over a run's corpus used by stages, revisions and validation."""

    entities: tuple[Entity, ...]
    documents: tuple[SourceDocument, ...]
    aliases: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self._docs = {(d.entity_id, d.url): d for d in self.documents}
        self._by_id = {e.id: e for e in self.entities}

    @classmethod
    def build(cls, manifest: Manifest, lexicon: Lexicon | None = None,
              tokenizer: Tokenizer | None = None) -> "SourceIndex":
        lex = lexicon or default_lexicon()
        docs = tuple(with_sentences(d, tokenizer) for d in manifest.documents)
        aliases = lex.alias_table((e.display_name, e.aliases) for e in manifest.entities)
        return cls(manifest.entities, docs, aliases)

    def entity(self, entity_id: str) -> Entity:
        return self._by_id[entity_id]

    def doc(self, entity_id: str, url: str) -> SourceDocument | None:
        return self._docs.get((entity_id, url))

    def docs_for(self, entity_id: str) -> list[SourceDocument]:
        return [d for d in self.documents if d.entity_id == entity_id]

    def rank(self, entity_id: str, url: str) -> int:
        d = self.doc(entity_id, url)
        return d.search_rank if d else 10**6

    def sentences(self, entity_id: str) -> list[Sentence]:
        return [s for d in self.docs_for(entity_id) for s in d.essential_sentences]

    def is_extractive(self, entity_id: str, url: str, evidence: str) -> bool:
        d = self.doc(entity_id, url)
        return d is not None and contains_verbatim(d.raw_text, evidence)

    def locate(self, entity_id: str, evidence: str) -> str | None:
        """URL of the first (best-ranked) document of ``entity_id`` containing ``evidence``."""
        for d in self.docs_for(entity_id):
            if contains_verbatim(d.raw_text, evidence):
                return d.url
        return None

    def names_of(self, entity_id: str) -> tuple[str, ...]:
        e = self.entity(entity_id)
        return tuple(dict.fromkeys([*e.names, *self.aliases.get(e.display_name, ())]))


# ---------------------------------------------------------------------------
# Optional URL fetcher
# ---------------------------------------------------------------------------

class _TextExtractor(HTMLParser):
    _SKIP = {"script", "style", "nav", "header", "footer", "noscript", "aside"}
    _BLOCK = {"p", "div", "li", "br", "h1", "h2", "h3", "h4", "h5", "h6", "tr", "section", "article"}

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self._skip = 0

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP:
            self._skip += 1
        elif tag in self._BLOCK:
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag in self._SKIP and self._skip:
            self._skip -= 1
        elif tag in self._BLOCK:
            self.parts.append("\n")

    def handle_data(self, data):
        if not self._skip:
            self.parts.append(data)


def html_to_text(markup: str) -> str:
    parser = _TextExtractor()
    parser.feed(markup)
    parser.close()
    text = html.unescape("".join(parser.parts))
    lines = (re.sub(r"[ \t]+", " ", ln).strip() for ln in text.splitlines())
    return "\n".join(ln for ln in lines if ln)


class UrlFetcher:
    """Materializes document text for URL-only manifest entries; results are cached on disk."""

    def __init__(self, cache_dir: str | Path, timeout_s: float = 10.0, retries: int = 2, client=None):
        import httpx

        self.cache_dir = Path(cache_dir)
        self.timeout_s = timeout_s
        self.retries = min(retries, 2)
        self._client = client or httpx.Client(timeout=timeout_s, follow_redirects=True)
        self._httpx = httpx

    def _cache_path(self, url: str) -> Path:
        return self.cache_dir / (hashlib.sha256(url.encode("utf-8")).hexdigest() + ".txt")

    def fetch_text(self, url: str) -> str:
        cached = self._cache_path(url)
        if cached.is_file():
            return cached.read_text(encoding="utf-8")
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._client.get(url, timeout=self.timeout_s)
                resp.raise_for_status()
                break
            except self._httpx.HTTPError as exc:
                last = exc
        else:
            raise CorpusError(f"could not fetch {url}: {last}")
        ctype = resp.headers.get("content-type", "")
        text = html_to_text(resp.text) if "html" in ctype or resp.text.lstrip().startswith("<") else resp.text
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        cached.write_text(text, encoding="utf-8")
        return text
