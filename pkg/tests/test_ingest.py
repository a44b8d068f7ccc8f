from __future__ import annotations

import json
import warnings
from collections import Counter

import httpx
import pytest
from hypothesis import given, settings, strategies as st

from abcompare.errors import CorpusError
from abcompare.ingest import (
    CorpusSizeWarning,
    TilingWarning,
    UrlFetcher,
    check_corpus_size,
    extract_essential_sentences,
    html_to_text,
    parse_manifest,
    read_manifest,
    split_oversized,
    split_sentences,
    tile,
    tile_entity,
    with_sentences,
)
from abcompare.model import Sentence, SourceDocument, TokenBudget

from conftest import make_corpus


def test_toy_manifest(toy_manifest):
    assert [e.id for e in toy_manifest.entities] == ["speakerx", "speakery"]
    assert len(toy_manifest.documents) == 6
    assert toy_manifest.entity("Speaker X").id == "speakerx"
    with pytest.raises(CorpusError):
        toy_manifest.entity("nobody")


def test_manifest_digest_changes_with_text():
    a = parse_manifest(make_corpus({"A": ["One two three four."]}))
    b = parse_manifest(make_corpus({"A": ["One two three five."]}))
    assert a.digest != b.digest
    assert parse_manifest(a.to_dict()).digest == a.digest


@pytest.mark.parametrize(
    "data",
    [
        [],
        {"entities": [{"display_name": "no id"}]},
        {"entities": [{"id": "a", "documents": [{"search_rank": 1, "text": "x"}]}]},
        {"entities": [{"id": "a", "documents": [{"url": "u", "search_rank": 0, "text": "x"}]}]},
        {"entities": [{"id": "a", "documents": [{"url": "u", "search_rank": True, "text": "x"}]}]},
        {"entities": [{"id": "a", "documents": [{"url": "u", "search_rank": 1, "text": "x"},
                                                 {"url": "u", "search_rank": 2, "text": "y"}]}]},
        {"entities": [{"id": "a", "documents": []}]},
        {"entities": [{"id": "a", "documents": [{"url": "u", "search_rank": 1, "text": "x"}]},
                      {"id": "a", "documents": []}]},
    ],
)
def test_malformed_manifests(data):
    with pytest.raises(CorpusError):
        parse_manifest(data)


def test_read_manifest_errors(tmp_path):
    with pytest.raises(CorpusError):
        read_manifest(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(CorpusError):
        read_manifest(bad)


def test_text_path_documents(tmp_path):
    (tmp_path / "doc.txt").write_text("The price of A is $5.")
    (tmp_path / "m.json").write_text(json.dumps(
        {"entities": [{"id": "a", "documents": [{"url": "u", "search_rank": 1, "text_file": "doc.txt"}]}]}
    ))
    m = read_manifest(tmp_path / "m.json")
    assert m.documents[0].raw_text.startswith("The price")


def test_corpus_size_warning():
    m = parse_manifest(make_corpus({"A": ["Some words in here."]}))
    with pytest.warns(CorpusSizeWarning):
        check_corpus_size(m)


def test_split_sentences_offsets():
    text = "First one here. Second one!\nThird line without stop"
    parts = split_sentences(text)
    assert [s for _, s in parts] == ["First one here.", "Second one!", "Third line without stop"]
    for off, s in parts:
        assert text[off:off + len(s)] == s


def test_essential_sentences_drop_boilerplate():
    doc = SourceDocument("u", "a", 1, "Home | Deals\n* * * * *\nThe price of A is $5. Ok. The price of A is $5.")
    sents = [s.text for s in extract_essential_sentences(doc)]
    assert sents == ["The price of A is $5."]


def test_empty_document_yields_nothing():
    assert with_sentences(SourceDocument("u", "a", 1, "   ")).essential_sentences == ()
    with pytest.raises(ValueError):
        extract_essential_sentences(SourceDocument("u", "a", 1, ""))


def _sent(text, i=0):
    return Sentence(text, "u", i, len(text.split()))


def test_tile_budget_boundary():
    budget = TokenBudget(10, 5)  # 5 tokens per tile
    s1, s2 = _sent("a b c"), _sent("d e", 6)
    tiles = tile([s1, s2], budget)
    assert len(tiles) == 1 and tiles[0].token_total == 5
    tiles = tile([s1, s2, _sent("f", 9)], budget)
    assert len(tiles) == 2


def test_oversized_sentence_is_split():
    s = _sent("one two three four five six seven")
    with pytest.warns(TilingWarning):
        tiles = tile([s], TokenBudget(13, 10))
    assert all(t.token_total <= 3 for t in tiles)
    assert "".join(p.text for t in tiles for p in t.sentences) == s.text


def test_split_oversized_is_contiguous():
    s = Sentence("alpha  beta gamma delta", "u", 100, 4)
    parts = split_oversized(s, 2)
    assert "".join(p.text for p in parts) == s.text
    assert parts[1].char_offset == 100 + s.text.index("gamma")


def test_empty_input_gives_no_tiles():
    assert tile([], TokenBudget()) == []


WORDS = st.text(alphabet="abcdefghij", min_size=1, max_size=6)
SENTENCES = st.lists(WORDS, min_size=1, max_size=30).map(" ".join)


@settings(max_examples=150, deadline=None)
@given(st.lists(SENTENCES, max_size=40), st.integers(min_value=1, max_value=40))
def test_tiling_properties(texts, limit):
    sentences = [Sentence(t, f"u{i}", 0, len(t.split())) for i, t in enumerate(texts)]
    budget = TokenBudget(limit + 1, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tiles = tile(sentences, budget)
        again = tile(sentences, budget)
    assert tiles == again
    assert all(0 < t.token_total <= limit for t in tiles)
    pieces = [p for t in tiles for p in t.sentences]
    assert all(p.token_count <= limit for p in pieces)
    # fragments re-join to the original sentences, in the original order
    joined: dict[str, str] = {}
    for p in pieces:
        joined[p.doc_url] = joined.get(p.doc_url, "") + p.text
    assert list(joined) == [s.doc_url for s in sentences]
    assert Counter(joined.values()) == Counter(s.text for s in sentences)


def test_tile_entity_orders_by_rank():
    docs = [with_sentences(SourceDocument(f"u{r}", "a", r, f"Sentence from rank {r} here.")) for r in (3, 1, 2)]
    tiles = tile_entity(docs, TokenBudget(), "a")
    assert [s.doc_url for s in tiles[0].sentences] == ["u1", "u2", "u3"]


def test_html_to_text_strips_chrome():
    markup = "<html><nav>Menu</nav><p>The price of A is &pound;5.</p><script>x()</script><footer>f</footer></html>"
    assert html_to_text(markup) == "The price of A is £5."


def test_url_fetcher_caches(tmp_path):
    calls = []

    def handler(request):
        calls.append(request.url)
        return httpx.Response(200, text="<p>Hello world text here.</p>", headers={"content-type": "text/html"})

    client = httpx.Client(transport=httpx.MockTransport(handler))
    f = UrlFetcher(tmp_path, client=client)
    assert f.fetch_text("https://x.example/a") == "Hello world text here."
    assert f.fetch_text("https://x.example/a") == "Hello world text here."
    assert len(calls) == 1


def test_url_fetcher_failure(tmp_path):
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(503)))
    with pytest.raises(CorpusError):
        UrlFetcher(tmp_path, client=client).fetch_text("https://x.example/a")
