from __future__ import annotations

from pathlib import Path

import pytest

from abcompare.cli import toy_corpus_path
from abcompare.config import PipelineConfig
from abcompare.gateway import DeterministicBackend, Gateway
from abcompare.ingest import read_manifest
from abcompare.lexicon import default_lexicon
from abcompare.pipeline import run_pipeline_detailed

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def lexicon():
    return default_lexicon()


@pytest.fixture(scope="session")
def toy_path() -> Path:
    return toy_corpus_path()


@pytest.fixture(scope="session")
def toy_manifest(toy_path):
    return read_manifest(toy_path)


@pytest.fixture
def det_gateway(lexicon):
    return Gateway(DeterministicBackend(lexicon))


@pytest.fixture(scope="session")
def toy_run(toy_path):
    return run_pipeline_detailed(("speakerx", "speakery"), toy_path, PipelineConfig())


@pytest.fixture(scope="session")
def toy_run_no_cr(toy_path):
    return run_pipeline_detailed(("speakerx", "speakery"), toy_path, PipelineConfig(cr_enabled=False))


def make_corpus(entities: dict[str, list[str]], aliases: dict[str, list[str]] | None = None) -> dict:
    """Manifest dict: {entity display name: [doc text, ...]} with ranks in list order."""
    aliases = aliases or {}
    out = []
    for name, docs in entities.items():
        eid = name.lower().replace(" ", "-")
        out.append({
            "id": eid,
            "display_name": name,
            "aliases": aliases.get(name, []),
            "documents": [
                {"url": f"https://{eid}.example.com/{i}", "search_rank": i + 1, "text": t}
                for i, t in enumerate(docs)
            ],
        })
    return {"entities": out}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
