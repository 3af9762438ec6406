"""Loading pairwise preference datasets and filtering them down to reasoning questions."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .core import (AttributeScoreCard, JudgeVerdict, PreferencePair, RationaleRecord, Verdict,
                   normalize_scale)
from .errors import DataError, JudgeEndpointError, OfflineCacheMiss

logger = logging.getLogger(__name__)

FORMATS = ("arena_jsonl", "mtbench_jsonl")
TURN_SEPARATOR = "\n\n"


@dataclass(frozen=True)
class RawConversationPair:
    question_id: str
    model_a: str
    model_b: str
    winner: str
    conversation_a: tuple[tuple[str, str], ...]
    conversation_b: tuple[tuple[str, str], ...]
    language: str | None = None
    turn: int | None = None
    judge: str | None = None

    def __post_init__(self):
        if self.winner not in {v.value for v in Verdict}:
            raise DataError(f"unknown winner {self.winner!r} for question {self.question_id!r}")
        for name in ("conversation_a", "conversation_b"):
            _check_conversation(getattr(self, name), f"{self.question_id}/{name}")

    @classmethod
    def from_json(cls, record: dict) -> "RawConversationPair":
        try:
            return cls(
                question_id=str(record["question_id"]),
                model_a=str(record["model_a"]),
                model_b=str(record["model_b"]),
                winner=record["winner"],
                conversation_a=_turns(record["conversation_a"]),
                conversation_b=_turns(record["conversation_b"]),
                language=record.get("language"),
                turn=record.get("turn"),
                judge=record.get("judge"),
            )
        except KeyError as exc:
            raise DataError(f"missing field {exc.args[0]!r}") from None


def _turns(conversation) -> tuple[tuple[str, str], ...]:
    if not isinstance(conversation, list):
        raise DataError("conversation must be a list of turns")
    out = []
    for turn in conversation:
        if not isinstance(turn, dict) or "role" not in turn or "content" not in turn:
            raise DataError(f"malformed turn {turn!r}")
        out.append((str(turn["role"]), str(turn["content"])))
    return tuple(out)


def _check_conversation(turns, where: str) -> None:
    if not turns:
        raise DataError(f"{where}: empty conversation")
    for i, (role, _) in enumerate(turns):
        expected = "user" if i % 2 == 0 else "assistant"
        if role != expected:
            raise DataError(f"{where}: turn {i} has role {role!r}, expected {expected!r}")


def extract_rationale(pair: RawConversationPair, side: str) -> RationaleRecord:
    """Flatten one side's dialogue: user turns form the question, assistant turns the rationale."""
    if side not in ("A", "B"):
        raise ValueError(f"side must be 'A' or 'B', got {side!r}")
    turns = pair.conversation_a if side == "A" else pair.conversation_b
    model = pair.model_a if side == "A" else pair.model_b
    user = [c for r, c in turns if r == "user"]
    assistant = [c for r, c in turns if r == "assistant"]
    if not assistant:
        raise DataError(f"question {pair.question_id!r} side {side}: no assistant turn")
    return RationaleRecord(
        question_id=pair.question_id,
        model_id=model,
        question_text=TURN_SEPARATOR.join(user),
        rationale_text=TURN_SEPARATOR.join(assistant),
        turns=len(assistant),
    )


def _pair_id(raw: RawConversationPair, fmt: str) -> str:
    if fmt == "arena_jsonl":
        return raw.question_id
    parts = [raw.question_id, raw.model_a, raw.model_b]
    if raw.turn is not None:
        parts.append(f"t{raw.turn}")
    if raw.judge:
        parts.append(raw.judge)
    return ":".join(parts)


def load_pairs(path: str | Path, format: str = "arena_jsonl") -> list[PreferencePair]:
    """Read a JSONL file of pairwise battles, one :class:`PreferencePair` per line, in file order."""
    if format not in FORMATS:
        raise DataError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    pairs: list[PreferencePair] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if "sides" in record:
                    pair = PreferencePair.from_dict(record)
                else:
                    raw = RawConversationPair.from_json(record)
                    a, b = extract_rationale(raw, "A"), extract_rationale(raw, "B")
                    pid = _pair_id(raw, format)
                    pair = PreferencePair(pid, a.question_text, a, b, Verdict(raw.winner))
            except (json.JSONDecodeError, DataError, KeyError, TypeError, ValueError) as exc:
                snippet = line.strip()[:80]
                raise DataError(f"{path}:{lineno}: {exc} (line starts {snippet!r})") from None
            # mtbench repeats (question, models, turn, judge) rarely; keep ids unique and stable
            n = seen.get(pair.pair_id, 0)
            seen[pair.pair_id] = n + 1
            if n:
                pair = PreferencePair(f"{pair.pair_id}#{n}", pair.question, pair.side_a, pair.side_b,
                                      pair.human_verdict)
            pairs.append(pair)
    return pairs


def dump_pairs(pairs: Iterable[PreferencePair], path: str | Path) -> None:
    """Write pairs in the canonical JSONL form that :func:`load_pairs` reads back."""
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Reasoning filter

FILTER_PROMPT = """You are classifying user questions by the kind of reasoning they require.

Reply with exactly one lowercase word from this list and nothing else:
math - arithmetic, algebra, geometry, probability or any other mathematical problem
logic - puzzles, deduction, riddles or other logical reasoning
coding - writing, explaining or debugging code
other - anything else (creative writing, chit-chat, advice, factual lookup)

Question:
{question}
"""

CATEGORIES = ("math", "logic", "coding", "other")
DEFAULT_KEEP = frozenset({"math", "logic"})


@dataclass(frozen=True)
class FilterDecision:
    pair_id: str
    keep: bool
    category: str
    judge_rationale: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


UNDECIDED = "undecided"


def parse_category(text: str) -> str:
    words = re.findall(r"[a-z]+", text.lower())
    for word in words[:3]:
        if word in CATEGORIES:
            return word
    raise DataError(f"classifier reply has no category token: {text[:80]!r}")


@dataclass
class FilterSummary:
    kept: int = 0
    dropped: int = 0
    undecided: int = 0
    by_category: dict[str, int] = field(default_factory=dict)


def filter_reasoning_pairs(
    pairs: Sequence[PreferencePair],
    classifier: Callable[[str], str],
    keep: Iterable[str] = DEFAULT_KEEP,
    max_workers: int = 4,
) -> tuple[list[PreferencePair], list[FilterDecision]]:
    """Classify each pair's question and keep those whose category is in ``keep``.

    ``classifier`` maps a rendered prompt to the raw reply. Failures (endpoint errors or
    unparseable replies) mark the pair undecided, which excludes it.
    """
    keep = frozenset(keep)

    def classify(pair: PreferencePair) -> FilterDecision:
        try:
            reply = classifier(FILTER_PROMPT.replace("{question}", pair.question))
            category = parse_category(reply)
        except OfflineCacheMiss:
            raise
        except (JudgeEndpointError, DataError) as exc:
            logger.warning("filter: pair %s undecided: %s", pair.pair_id, exc)
            return FilterDecision(pair.pair_id, False, UNDECIDED, str(exc))
        return FilterDecision(pair.pair_id, category in keep, category, reply.strip())

    if not pairs:
        return [], []
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        decisions = list(pool.map(classify, pairs))  # map preserves input order
    kept = [p for p, d in zip(pairs, decisions) if d.keep]
    return kept, decisions


def summarize_decisions(decisions: Iterable[FilterDecision]) -> FilterSummary:
    summary = FilterSummary()
    for d in decisions:
        summary.by_category[d.category] = summary.by_category.get(d.category, 0) + 1
        if d.category == UNDECIDED:
            summary.undecided += 1
        elif d.keep:
            summary.kept += 1
        else:
            summary.dropped += 1
    return summary


def dump_decisions(decisions: Iterable[FilterDecision], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in decisions:
            fh.write(json.dumps(d.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def load_decisions(path: str | Path) -> list[FilterDecision]:
    with open(path, encoding="utf-8") as fh:
        return [FilterDecision(**json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Human annotations

def load_annotations(path: str | Path) -> dict[tuple[str, str], list[JudgeVerdict]]:
    """Read per-annotator attribute scores.

    Each JSONL record: ``{"pair_id", "side", "annotator_id", "scores": {...}, "scale": 1.0}``.
    Returns verdicts grouped by (pair_id, side), ready for :func:`~rationale_eval.core.aggregate_panel`.
    """
    grouped: dict[tuple[str, str], list[JudgeVerdict]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                scale = float(rec.get("scale", 1.0))
                annotator = str(rec["annotator_id"])
                scores = {k: normalize_scale(v, scale, judge_id=annotator, attribute=k)
                          for k, v in rec["scores"].items()}
                card = AttributeScoreCard.from_dict(scores).require_complete(f" (annotator {annotator})")
                key = (str(rec["pair_id"]), str(rec["side"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            grouped.setdefault(key, []).append(JudgeVerdict(annotator, scale, card))
    return grouped
