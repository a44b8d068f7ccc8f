"""Prompt templates, stored as versioned text assets next to this module."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from string import Template

from .grammar import wrap_block
from .types import StageTag

FORMAT_REMINDER = (
    "\n\nREMINDER: reply only with records in the exact line format described above; "
    "no prose."
)


@lru_cache(maxsize=None)
def load_template(stage: StageTag) -> Template:
    name = f"{StageTag(stage).value.lower()}.txt"
    text = resources.files("abcompare.gateway.templates").joinpath(name).read_text("utf-8")
    body = "\n".join(ln for ln in text.splitlines() if not ln.startswith("# "))
    return Template(body)


def template_version(stage: StageTag) -> str:
    name = f"{StageTag(stage).value.lower()}.txt"
    first = resources.files("abcompare.gateway.templates").joinpath(name).read_text("utf-8").splitlines()[0]
    return first.removeprefix("# template:").strip()


def render_prompt(stage: StageTag, payload: str) -> str:
    return load_template(stage).safe_substitute(payload=wrap_block(payload))
