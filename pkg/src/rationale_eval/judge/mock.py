"""A scripted, deterministic judge that speaks the chat-completions wire format.

Selected with ``endpoint_url = "mock://<name>[?options]"``. Replies depend only on
(model name, prompt), so results do not depend on call order or concurrency.

Options: ``fence=1`` wraps replies in code fences; ``fail_status=<code>&fail_times=<n>``
returns that status for the first n requests; ``garbage=1`` always returns unparseable text.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from urllib.parse import parse_qs, urlsplit

import httpx

from ..core import ATTRIBUTE_LABELS
from .parsing import format_verdict_text

_MATH_WORDS = re.compile(r"\b(solve|calculate|compute|equation|integral|derivative|probability|sum|"
                         r"product|percent|how many|how much|sqrt|prime|divisible|average)\b|\d\s*[-+*/^=]\s*\d")
_LOGIC_WORDS = re.compile(r"\b(puzzle|riddle|logic|logical|deduce|syllogism|true or false|if all|"
                          r"who is lying|knights?|knaves?)\b")
_CODE_WORDS = re.compile(r"\b(python|javascript|function|code|program|compile|bug)\b")


def keyword_category(question: str) -> str:
    q = question.lower()
    if _CODE_WORDS.search(q):
        return "coding"
    if _MATH_WORDS.search(q):
        return "math"
    if _LOGIC_WORDS.search(q):
        return "logic"
    return "other"


def _unit(*parts: str) -> float:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2 ** 64


def mock_scores(model: str, rationale: str, scale_max: float) -> dict[str, float]:
    """Deterministic scores in [0.2, 1] x scale, with a shared per-rationale quality term."""
    quality = _unit(model, "quality", rationale)
    out = {}
    for label in ATTRIBUTE_LABELS:
        s = 0.2 + 0.8 * (0.6 * quality + 0.4 * _unit(model, label, rationale))
        out[label] = round(s * scale_max, 2 if scale_max == 1.0 else 1)
    return out


class MockJudgeTransport(httpx.BaseTransport):
    def __init__(self, fence: bool = False, fail_status: int | None = None, fail_times: int = 0,
                 garbage: bool = False):
        self.fence = fence
        self.fail_status = fail_status
        self.fail_times = fail_times
        self.garbage = garbage
        self.requests = 0
        self._lock = threading.Lock()

    @classmethod
    def from_url(cls, url: str) -> "MockJudgeTransport":
        q = {k: v[-1] for k, v in parse_qs(urlsplit(url).query).items()}
        return cls(
            fence=q.get("fence") == "1",
            fail_status=int(q["fail_status"]) if "fail_status" in q else None,
            fail_times=int(q.get("fail_times", 0)),
            garbage=q.get("garbage") == "1",
        )

    def reply_for(self, model: str, prompt: str) -> str:
        if prompt.startswith("You are classifying"):
            question = prompt.split("Question:\n", 1)[-1]
            return keyword_category(question)
        if self.garbage:
            return "I am unable to score this rationale."
        scale = 10.0 if "and 10 (best)" in prompt else 1.0
        rationale = prompt.rsplit("\nRationale:\n", 1)[-1]
        text = format_verdict_text(mock_scores(model, rationale, scale))
        return f"```python\n{text}\n```" if self.fence else text

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        with self._lock:
            self.requests += 1
            failing = self.fail_status is not None and self.requests <= self.fail_times
        if failing:
            return httpx.Response(self.fail_status, json={"error": {"message": "scripted failure"}})
        body = json.loads(request.content)
        content = self.reply_for(body["model"], body["messages"][-1]["content"])
        return httpx.Response(200, json={
            "id": "mock", "object": "chat.completion", "model": body["model"],
            "choices": [{"index": 0, "finish_reason": "stop",
                         "message": {"role": "assistant", "content": content}}],
        })
