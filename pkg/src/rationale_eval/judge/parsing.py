"""Parse judge replies into verdicts.

Replies carry two assignments, ``scores = {...}`` and ``explanations = {...}``. The
dictionary literals are read with a small hand-written grammar so model output is never
evaluated::

    dict   := "{" [ entry ("," entry)* [","] ] "}"
    entry  := STRING ":" value
    value  := NUMBER | STRING

Strings are double-quoted with JSON escapes. A bare ``...`` token is rejected.
"""

from __future__ import annotations

import json
import re

from ..core import ATTRIBUTES, AttributeName, AttributeScoreCard, JudgeVerdict, normalize_scale
from ..errors import (DataError, IncompleteVerdictError, ScoreRangeError, VerdictParseError,
                      VerdictRangeError)

_FENCE_RE = re.compile(r"^[ \t]*```[A-Za-z0-9_+-]*[ \t]*$", re.M)
_NUMBER_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_WS_RE = re.compile(r"(?:\s|#[^\n]*)*")


def strip_fences(text: str) -> str:
    return _FENCE_RE.sub("", text)


class _Reader:
    def __init__(self, text: str, pos: int, raw: str):
        self.text = text
        self.pos = pos
        self.raw = raw

    def fail(self, message: str):
        context = self.text[max(0, self.pos - 20): self.pos + 20]
        raise VerdictParseError(f"{message} at offset {self.pos} near {context!r}", self.raw)

    def skip(self):
        self.pos = _WS_RE.match(self.text, self.pos).end()

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos: self.pos + 1]

    def expect(self, ch: str):
        if self.peek() != ch:
            self.fail(f"expected {ch!r}")
        self.pos += 1

    def string(self) -> str:
        if self.peek() != '"':
            if self.text.startswith("...", self.pos) or self.text.startswith("…", self.pos):
                self.fail("ellipsis placeholder instead of an entry")
            self.fail("expected a double-quoted string")
        try:
            value, end = json.JSONDecoder().raw_decode(self.text, self.pos)
        except json.JSONDecodeError:
            self.fail("unterminated or malformed string")
        self.pos = end
        return value

    def value(self):
        ch = self.peek()
        if ch == '"':
            return self.string()
        m = _NUMBER_RE.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return float(m.group())
        if self.text.startswith("...", self.pos) or self.text.startswith("…", self.pos):
            self.fail("ellipsis placeholder instead of a value")
        self.fail("expected a number or string")

    def dictionary(self) -> list[tuple[str, object]]:
        self.expect("{")
        entries = []
        while True:
            if self.peek() == "}":
                self.pos += 1
                return entries
            key = self.string()
            self.expect(":")
            entries.append((key, self.value()))
            ch = self.peek()
            if ch == ",":
                self.pos += 1
            elif ch == "}":
                self.pos += 1
                return entries
            else:
                self.fail("expected ',' or '}'")


def _find_block(text: str, name: str, raw: str) -> list[tuple[str, object]]:
    matches = list(re.finditer(rf"(?<![A-Za-z0-9_]){name}\s*=\s*(?=\{{)", text))
    if not matches:
        raise VerdictParseError(f"no '{name} = {{...}}' block found", raw)
    # the last assignment wins: some models echo the format before answering
    return _Reader(text, matches[-1].end(), raw).dictionary()


def _keyed(entries, kind: str, raw: str) -> dict[AttributeName, object]:
    out: dict[AttributeName, object] = {}
    for key, value in entries:
        try:
            attr = AttributeName.parse(key)
        except DataError:
            raise VerdictParseError(f"unknown attribute {key!r} in {kind}", raw) from None
        if attr in out:
            raise VerdictParseError(f"duplicate attribute {attr.value!r} in {kind}", raw)
        out[attr] = value
    return out


def parse_verdict(raw: str, config) -> JudgeVerdict:
    """Parse a judge reply into a complete, normalized :class:`JudgeVerdict`.

    ``config`` is a :class:`~rationale_eval.judge.client.JudgeConfig` (only ``judge_id``
    and ``native_scale_max`` are read). Raises a
    :class:`~rationale_eval.errors.VerdictError` subclass on any defect.
    """
    judge_id, native_scale_max = config.judge_id, config.native_scale_max
    if not isinstance(raw, str):
        raise VerdictParseError(f"reply must be text, got {type(raw).__name__}")
    text = strip_fences(raw)
    scores = _keyed(_find_block(text, "scores", raw), "scores", raw)
    explanations = _keyed(_find_block(text, "explanations", raw), "explanations", raw)

    normalized = {}
    for attr, value in scores.items():
        if not isinstance(value, float):
            raise VerdictParseError(f"score for {attr.value!r} is not a number", raw)
        try:
            normalized[attr] = normalize_scale(value, native_scale_max, judge_id=judge_id, attribute=attr.value)
        except ScoreRangeError as exc:
            raise VerdictRangeError(exc) from None
    missing = [a for a in ATTRIBUTES if a not in normalized]
    if missing:
        raise IncompleteVerdictError(missing)
    for attr, value in explanations.items():
        if not isinstance(value, str):
            raise VerdictParseError(f"explanation for {attr.value!r} is not a string", raw)
    return JudgeVerdict(
        judge_id=judge_id,
        native_scale_max=float(native_scale_max),
        card=AttributeScoreCard(normalized),
        explanations={a: explanations[a] for a in ATTRIBUTES if a in explanations},
        raw_response=raw,
    )


def format_verdict_text(scores: dict[str, float], explanations: dict[str, str] | None = None) -> str:
    """Render the reply format judges are asked to produce (used by mocks and tests)."""
    explanations = explanations or {k: f"Assessment of {k.lower()}." for k in scores}
    lines = ["scores = {"]
    lines += [f"    {json.dumps(k)}: {v!r}," for k, v in scores.items()]
    lines += ["}", "", "explanations = {"]
    lines += [f"    {json.dumps(k)}: {json.dumps(v)}," for k, v in explanations.items()]
    lines.append("}")
    return "\n".join(lines)
