from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rationale_eval.core import (ATTRIBUTE_LABELS, AttributeName, AttributeScoreCard, PreferencePair,
                                 RationaleRecord, Verdict)

FIXTURES = Path(__file__).parent / "fixtures"
_ACCEPTANCE: list[str] = []


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion; lines are repeated in the terminal summary."""

    def record(number: int, name: str, ok: bool, detail: str = "") -> None:
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


# ---------------------------------------------------------------------------
# builders shared by several modules

def make_pair(pair_id: str, model_a: str = "m1", model_b: str = "m2", verdict: Verdict = Verdict.A_WINS,
              question: str = "What is 2 + 2?") -> PreferencePair:
    a = RationaleRecord(pair_id, model_a, question, f"{model_a} says 4 ({pair_id})")
    b = RationaleRecord(pair_id, model_b, question, f"{model_b} says 4 ({pair_id})")
    return PreferencePair(pair_id, question, a, b, verdict)


def card(value: float = 0.5, **overrides: float) -> AttributeScoreCard:
    scores = {a: value for a in AttributeName}
    for key, v in overrides.items():
        scores[AttributeName.parse(key)] = v
    return AttributeScoreCard(scores)


PLANTED = {"Correctness": 3.0, "Plausibility": 2.0, "Completeness": 2.0}


def planted_dataset(seed: int, n_pairs: int = 1000, noise: float = 0.05, weights=PLANTED):
    """Pairs whose preference is logistic(w . true score difference); features carry judge noise."""
    rng = np.random.default_rng(seed)
    w = np.array([weights.get(label, 0.0) for label in ATTRIBUTE_LABELS])
    true_a = rng.uniform(0, 1, size=(n_pairs, len(w)))
    true_b = rng.uniform(0, 1, size=(n_pairs, len(w)))
    p = 1.0 / (1.0 + np.exp(-(true_a - true_b) @ w))
    y = (rng.uniform(size=n_pairs) < p).astype(float)
    obs_a = np.clip(true_a + rng.normal(0, noise, size=true_a.shape), 0, 1)
    obs_b = np.clip(true_b + rng.normal(0, noise, size=true_b.shape), 0, 1)
    return obs_a - obs_b, y
