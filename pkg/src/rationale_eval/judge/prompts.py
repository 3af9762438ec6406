"""Attribute-scoring prompt templates and rendering."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from ..errors import ConfigError

PLACEHOLDERS = ("{question}", "{rationale}")
_PLACEHOLDER_RE = re.compile(r"\{(question|rationale)\}")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    scale_max: float

    def __post_init__(self):
        for ph in PLACEHOLDERS:
            n = self.body.count(ph)
            if n != 1:
                raise ConfigError(f"template {self.template_id!r}: placeholder {ph} appears {n} times, expected 1")
        if self.scale_max not in (1.0, 10.0):
            raise ConfigError(f"template {self.template_id!r}: scale_max must be 1 or 10")


def render_prompt(template: PromptTemplate, question: str, rationale: str) -> str:
    """Substitute question and rationale into the template body.

    Substitution is a single pass over the template, so braces or placeholder-like text
    inside the inserted strings are left alone.
    """
    body = template.body
    for ph in PLACEHOLDERS:
        if body.count(ph) != 1:
            raise ConfigError(f"template {template.template_id!r} cannot resolve {ph}")
    values = {"question": question, "rationale": rationale}
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], body)


@lru_cache(maxsize=None)
def _read(name: str) -> str:
    return resources.files("rationale_eval.templates").joinpath(name).read_text(encoding="utf-8")


def builtin_template(template_id: str) -> PromptTemplate:
    """``main`` scores on 0-1 (closed judges); ``olmo`` scores on 0-10."""
    if template_id == "main":
        return PromptTemplate("main", _read("main_0_1.txt"), 1.0)
    if template_id == "olmo":
        return PromptTemplate("olmo", _read("olmo_0_10.txt"), 10.0)
    raise ConfigError(f"unknown builtin template {template_id!r} (expected 'main' or 'olmo')")


BUILTIN_TEMPLATE_IDS = ("main", "olmo")


def example_output_block(template: PromptTemplate) -> str:
    """The example ``scores``/``explanations`` block embedded in a builtin template."""
    start = template.body.index("scores = {")
    end = template.body.index("Math/Logic Question:")
    return template.body[start:end].strip()
