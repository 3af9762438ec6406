"""Domain types shared across the pipeline: attributes, score cards, pairs, verdicts."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, IncompleteCardError, ScoreRangeError


class AttributeName(enum.Enum):
    """The twelve rationale quality attributes, in canonical order.

    ``value`` is the display / serialization spelling used in judge prompts.
    """

    FAITHFULNESS = "Faithfulness"
    HALLUCINATION = "Hallucination"
    REPETITION = "Repetition"
    INFORMATIVENESS = "Informativeness"
    PLAUSIBILITY = "Plausibility"
    SELF_CONSISTENCY = "Self-Consistency"
    SOURCE_CONSISTENCY = "Source Consistency"
    GRAMMAR = "Grammar"
    ARITHMETIC_ACCURACY = "Arithmetic Accuracy"
    CONCISENESS = "Conciseness"
    COMPLETENESS = "Completeness"
    CORRECTNESS = "Correctness"

    @property
    def definition(self) -> str:
        return _DEFINITIONS[self]

    @property
    def index(self) -> int:
        return _INDEX[self]

    @classmethod
    def parse(cls, name: str) -> "AttributeName":
        """Resolve any accepted spelling (display, enum, CamelCase, aliases)."""
        key = _fold(name)
        try:
            return _ALIASES[key]
        except KeyError:
            raise DataError(f"unknown attribute name {name!r}") from None


_DEFINITIONS = {
    AttributeName.FAITHFULNESS: "Is the rationale supported by the model's actual computation or the provided evidence?",
    AttributeName.HALLUCINATION: "Does the rationale introduce information not present in the source/context?",
    AttributeName.REPETITION: "Does the rationale unnecessarily repeat points or phrases?",
    AttributeName.INFORMATIVENESS: "Does the rationale add meaningful, relevant details?",
    AttributeName.PLAUSIBILITY: 'Does the rationale "sound right" or seem believable, regardless of truth?',
    AttributeName.SELF_CONSISTENCY: "Does the rationale avoid contradictions within itself, with all reasoning steps logically aligned?",
    AttributeName.SOURCE_CONSISTENCY: "Does the rationale avoid contradicting the given context or information in the problem statement?",
    AttributeName.GRAMMAR: "Is the rationale well-written, clear, and free of grammatical mistakes?",
    AttributeName.ARITHMETIC_ACCURACY: "Are any calculations in the rationale correct?",
    AttributeName.CONCISENESS: "Is the rationale as short as possible, without losing information? Especially if length is a concern.",
    AttributeName.COMPLETENESS: "Does the rationale explain all necessary steps/evidence?",
    AttributeName.CORRECTNESS: "Are all steps and answers in the rationale objectively correct?",
}

ATTRIBUTES: tuple[AttributeName, ...] = tuple(AttributeName)
ATTRIBUTE_LABELS: tuple[str, ...] = tuple(a.value for a in ATTRIBUTES)
N_ATTRIBUTES = len(ATTRIBUTES)
_INDEX = {a: i for i, a in enumerate(ATTRIBUTES)}


def _fold(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


_ALIASES: dict[str, AttributeName] = {}
for _a in ATTRIBUTES:
    _ALIASES[_fold(_a.value)] = _a
    _ALIASES[_fold(_a.name)] = _a
_ALIASES[_fold("Coverage/Completeness")] = AttributeName.COMPLETENESS
_ALIASES[_fold("Coverage")] = AttributeName.COMPLETENESS


def normalize_scale(raw: float, native_max: float, *, judge_id: str | None = None,
                    attribute: str | None = None) -> float:
    """Map a score on ``[0, native_max]`` to ``[0, 1]``."""
    if not native_max > 0:
        raise ValueError(f"native_max must be positive, got {native_max!r}")
    raw = float(raw)
    if not (0.0 <= raw <= native_max):  # also rejects NaN
        raise ScoreRangeError(raw, native_max, judge_id=judge_id, attribute=attribute)
    if native_max == 1.0:
        return raw
    return raw / native_max


@dataclass(frozen=True)
class AttributeScoreCard:
    """Normalized scores in [0, 1]; 1 is always best, Hallucination and Repetition included."""

    scores: Mapping[AttributeName, float]

    def __post_init__(self):
        clean = {}
        for key, value in self.scores.items():
            attr = key if isinstance(key, AttributeName) else AttributeName.parse(key)
            value = float(value)
            if not (0.0 <= value <= 1.0):
                raise ScoreRangeError(value, 1.0, attribute=attr.value)
            clean[attr] = value
        ordered = {a: clean[a] for a in ATTRIBUTES if a in clean}
        object.__setattr__(self, "scores", MappingProxyType(ordered))

    @property
    def complete(self) -> bool:
        return len(self.scores) == N_ATTRIBUTES

    @property
    def missing(self) -> tuple[AttributeName, ...]:
        return tuple(a for a in ATTRIBUTES if a not in self.scores)

    def __getitem__(self, attr: AttributeName) -> float:
        return self.scores[attr]

    def require_complete(self, context: str = "") -> "AttributeScoreCard":
        if not self.complete:
            raise IncompleteCardError(self.missing, context)
        return self

    def to_array(self) -> np.ndarray:
        self.require_complete()
        return np.array([self.scores[a] for a in ATTRIBUTES], dtype=float)

    def to_dict(self) -> dict[str, float]:
        """Canonical serialization: display names in canonical order."""
        return {a.value: v for a, v in self.scores.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "AttributeScoreCard":
        return cls(dict(data))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "AttributeScoreCard":
        if len(values) != N_ATTRIBUTES:
            raise DataError(f"expected {N_ATTRIBUTES} values, got {len(values)}")
        return cls(dict(zip(ATTRIBUTES, (float(v) for v in values))))

    def __eq__(self, other):
        if not isinstance(other, AttributeScoreCard):
            return NotImplemented
        return dict(self.scores) == dict(other.scores)

    def __hash__(self):
        return hash(tuple(self.scores.items()))


@dataclass(frozen=True)
class RationaleRecord:
    question_id: str
    model_id: str
    question_text: str
    rationale_text: str
    turns: int = 1

    def __post_init__(self):
        if not self.rationale_text:
            raise DataError(f"empty rationale for question {self.question_id!r} model {self.model_id!r}")


class Verdict(enum.Enum):
    A_WINS = "model_a"
    B_WINS = "model_b"
    TIE = "tie"
    TIE_BOTH_BAD = "tie (bothbad)"

    @property
    def label(self) -> float:
        """Preference label for side A: 1 = A preferred, 0.5 = any tie."""
        return {Verdict.A_WINS: 1.0, Verdict.B_WINS: 0.0}.get(self, 0.5)

    @property
    def decided(self) -> bool:
        return self in (Verdict.A_WINS, Verdict.B_WINS)


PREFERENCE_LABELS = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class PreferencePair:
    pair_id: str
    question: str
    side_a: RationaleRecord
    side_b: RationaleRecord
    human_verdict: Verdict

    def __post_init__(self):
        if self.side_a.model_id == self.side_b.model_id:
            raise DataError(f"pair {self.pair_id}: both sides are model {self.side_a.model_id!r}")
        if not (self.question == self.side_a.question_text == self.side_b.question_text):
            raise DataError(f"pair {self.pair_id}: sides disagree on question text")

    def side(self, which: str) -> RationaleRecord:
        return self.side_a if which == "A" else self.side_b

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "question": self.question,
            "verdict": self.human_verdict.value,
            "sides": {
                s: {"question_id": r.question_id, "model_id": r.model_id, "rationale": r.rationale_text,
                    "turns": r.turns}
                for s, r in (("A", self.side_a), ("B", self.side_b))
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PreferencePair":
        sides = {
            s: RationaleRecord(v["question_id"], v["model_id"], d["question"], v["rationale"], v.get("turns", 1))
            for s, v in d["sides"].items()
        }
        return cls(d["pair_id"], d["question"], sides["A"], sides["B"], Verdict(d["verdict"]))


@dataclass(frozen=True)
class JudgeVerdict:
    judge_id: str
    native_scale_max: float
    card: AttributeScoreCard
    explanations: Mapping[AttributeName, str] = field(default_factory=dict)
    raw_response: str = ""

    def to_dict(self) -> dict:
        return {
            "judge_id": self.judge_id,
            "native_scale_max": self.native_scale_max,
            "scores": self.card.to_dict(),
            "explanations": {a.value: t for a, t in self.explanations.items()},
            "raw_response": self.raw_response,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "JudgeVerdict":
        return cls(
            judge_id=d["judge_id"],
            native_scale_max=float(d["native_scale_max"]),
            card=AttributeScoreCard.from_dict(d["scores"]),
            explanations={AttributeName.parse(k): v for k, v in d.get("explanations", {}).items()},
            raw_response=d.get("raw_response", ""),
        )


def aggregate_panel(verdicts: Iterable[JudgeVerdict | AttributeScoreCard]) -> AttributeScoreCard:
    """Per-attribute unweighted mean of complete cards (judges or human annotators)."""
    cards = [v.card if isinstance(v, JudgeVerdict) else v for v in verdicts]
    if not cards:
        raise DataError("cannot aggregate an empty panel")
    for i, card in enumerate(cards):
        card.require_complete(f" (panel member {i})")
    if len(cards) == 1:
        return cards[0]
    means = {}
    for attr in ATTRIBUTES:
        # fsum keeps n identical copies exactly equal to the copy
        m = math.fsum(c.scores[attr] for c in cards) / len(cards)
        means[attr] = min(1.0, max(0.0, m))
    return AttributeScoreCard(means)


def score_difference(a: AttributeScoreCard, b: AttributeScoreCard) -> np.ndarray:
    """Feature vector ``a - b`` in canonical attribute order."""
    return a.to_array() - b.to_array()
