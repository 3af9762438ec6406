"""ELO tournaments over human verdicts or per-attribute judge scores."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import ATTRIBUTES, AttributeName, AttributeScoreCard, PreferencePair
from .errors import DataError

logger = logging.getLogger(__name__)

HUMAN_PREFERENCE = "HumanPreference"
BASES: tuple[str, ...] = tuple(a.value for a in ATTRIBUTES) + (HUMAN_PREFERENCE,)


@dataclass(frozen=True)
class EloConfig:
    initial_rating: float = 1000.0
    k_factor: float = 4.0
    scale: float = 400.0
    permutations: int = 100
    bootstrap_samples: int = 1000
    seed: int = 0
    tie_epsilon: float = 1e-9

    def __post_init__(self):
        if not self.k_factor > 0:
            raise ValueError("k_factor must be > 0")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")
        if self.permutations < 1:
            raise ValueError("permutations must be >= 1")
        if self.bootstrap_samples < 0:
            raise ValueError("bootstrap_samples must be >= 0")


@dataclass(frozen=True)
class MatchOutcome:
    pair_id: str
    model_a: str
    model_b: str
    score_a: float
    basis: str = HUMAN_PREFERENCE

    def __post_init__(self):
        if self.score_a not in (0.0, 0.5, 1.0):
            raise DataError(f"score_a must be 0, 0.5 or 1, got {self.score_a!r}")
        if self.model_a == self.model_b:
            raise DataError(f"match {self.pair_id}: a model cannot play itself")


@dataclass(frozen=True)
class RatingTable:
    basis: str
    ratings: Mapping[str, float]
    ci_low: Mapping[str, float]
    ci_high: Mapping[str, float]
    games_played: Mapping[str, int]

    def ranked(self) -> list[str]:
        """Models by descending rating; equal ratings fall back to model id."""
        return sorted(self.ratings, key=lambda m: (-self.ratings[m], m))

    def ranks(self) -> dict[str, int]:
        """Competition ranks: 1 + number of models rated strictly higher."""
        values = self.ratings
        return {m: 1 + sum(1 for o in values if values[o] > values[m]) for m in values}


def expected_score(r_a: float, r_b: float, scale: float = 400.0) -> float:
    """Probability-like expectation of A against B under the logistic ELO model."""
    if not scale > 0:
        raise ValueError("scale must be > 0")
    return 1.0 / (1.0 + 10.0 ** ((r_b - r_a) / scale))


def elo_update(r_a: float, r_b: float, score_a: float, k_factor: float, scale: float) -> tuple[float, float]:
    """One sequential update; the transfer is exactly opposite for the two players."""
    delta = k_factor * (score_a - expected_score(r_a, r_b, scale))
    return r_a + delta, r_b - delta


def derive_outcome(pair: PreferencePair, card_a: AttributeScoreCard, card_b: AttributeScoreCard,
                   attribute: AttributeName, epsilon: float = 1e-9) -> MatchOutcome:
    """Winner on one attribute; differences within the closed band ``[-eps, eps]`` tie."""
    card_a.require_complete(f" (pair {pair.pair_id}, side A)")
    card_b.require_complete(f" (pair {pair.pair_id}, side B)")
    diff = card_a[attribute] - card_b[attribute]
    score = 1.0 if diff > epsilon else 0.0 if diff < -epsilon else 0.5
    return MatchOutcome(pair.pair_id, pair.side_a.model_id, pair.side_b.model_id, score, attribute.value)


def human_outcome(pair: PreferencePair) -> MatchOutcome:
    return MatchOutcome(pair.pair_id, pair.side_a.model_id, pair.side_b.model_id,
                        pair.human_verdict.label, HUMAN_PREFERENCE)


def _encode(outcomes: Sequence[MatchOutcome]):
    models = sorted({o.model_a for o in outcomes} | {o.model_b for o in outcomes})
    index = {m: i for i, m in enumerate(models)}
    a = np.array([index[o.model_a] for o in outcomes], dtype=np.int64)
    b = np.array([index[o.model_b] for o in outcomes], dtype=np.int64)
    s = np.array([o.score_a for o in outcomes], dtype=float)
    return models, a, b, s


def _play(a, b, s, orders: np.ndarray, n_models: int, config: EloConfig) -> np.ndarray:
    """Run ``len(orders)`` independent sequential tournaments; row r plays ``orders[r]``."""
    R = np.full((len(orders), n_models), float(config.initial_rating))
    rows = np.arange(len(orders))
    K, scale = config.k_factor, config.scale
    for t in range(orders.shape[1]):
        idx = orders[:, t]
        ai, bi = a[idx], b[idx]
        ra, rb = R[rows, ai], R[rows, bi]
        delta = K * (s[idx] - 1.0 / (1.0 + np.power(10.0, (rb - ra) / scale)))
        R[rows, ai] = ra + delta
        R[rows, bi] = rb - delta
    return R


def _shuffles(rng: np.random.Generator, base: np.ndarray, count: int) -> np.ndarray:
    return rng.permuted(np.tile(base, (count, 1)), axis=1)


def permutation_ratings(outcomes: Sequence[MatchOutcome], config: EloConfig = EloConfig()
                        ) -> tuple[list[str], np.ndarray]:
    """Final ratings after each seeded shuffle: (models, array of shape permutations x models)."""
    if not outcomes:
        raise DataError("no match outcomes to rate")
    models, a, b, s = _encode(outcomes)
    rng = np.random.default_rng([config.seed, 0])
    orders = _shuffles(rng, np.arange(len(outcomes)), config.permutations)
    return models, _play(a, b, s, orders, len(models), config)


def run_tournament(outcomes: Sequence[MatchOutcome], config: EloConfig = EloConfig(),
                   chunk_rows: int = 5000) -> RatingTable:
    """Permutation-averaged ELO with bootstrap percentile intervals."""
    models, per_perm = permutation_ratings(outcomes, config)
    bases = {o.basis for o in outcomes}
    basis = bases.pop() if len(bases) == 1 else "mixed"
    _, a, b, s = _encode(outcomes)
    n = len(outcomes)
    point = per_perm.mean(axis=0)

    games = np.bincount(a, minlength=len(models)) + np.bincount(b, minlength=len(models))
    lo, hi = point.copy(), point.copy()
    if config.bootstrap_samples:
        rng = np.random.default_rng([config.seed, 1])
        per_chunk = max(1, chunk_rows // config.permutations)
        boot = np.empty((config.bootstrap_samples, len(models)))
        for start in range(0, config.bootstrap_samples, per_chunk):
            count = min(per_chunk, config.bootstrap_samples - start)
            orders = []
            for _ in range(count):
                sample = rng.integers(0, n, size=n)
                orders.append(_shuffles(rng, sample, config.permutations))
            R = _play(a, b, s, np.concatenate(orders), len(models), config)
            boot[start:start + count] = R.reshape(count, config.permutations, len(models)).mean(axis=1)
        lo = np.minimum(np.percentile(boot, 2.5, axis=0), point)
        hi = np.maximum(np.percentile(boot, 97.5, axis=0), point)

    keep = [i for i, m in enumerate(models) if games[i] > 0]
    return RatingTable(
        basis=basis,
        ratings={models[i]: float(point[i]) for i in keep},
        ci_low={models[i]: float(lo[i]) for i in keep},
        ci_high={models[i]: float(hi[i]) for i in keep},
        games_played={models[i]: int(games[i]) for i in keep},
    )


def per_attribute_leaderboard(pairs: Sequence[PreferencePair],
                              panel_cards: Mapping[str, tuple[AttributeScoreCard, AttributeScoreCard]],
                              config: EloConfig = EloConfig(),
                              attributes: Iterable[AttributeName] = ATTRIBUTES,
                              include_human: bool = True) -> dict[str, RatingTable]:
    """One table per attribute (panel-mean winners) plus the human-preference table."""
    scored = [p for p in pairs if p.pair_id in panel_cards]
    skipped = len(pairs) - len(scored)
    if skipped:
        logger.warning("leaderboard: skipping %d unscored pair(s)", skipped)
    if not scored:
        raise DataError("no scored pairs to build leaderboards from")
    tables: dict[str, RatingTable] = {}
    for attr in attributes:
        outcomes = [derive_outcome(p, *panel_cards[p.pair_id], attr, config.tie_epsilon) for p in scored]
        tables[attr.value] = run_tournament(outcomes, config)
    if include_human:
        tables[HUMAN_PREFERENCE] = run_tournament([human_outcome(p) for p in scored], config)
    return tables


def rank_positions(tables: Mapping[str, RatingTable]) -> dict[str, dict[str, int]]:
    return {basis: table.ranks() for basis, table in tables.items()}


LEADERBOARD_HEADER = ("basis", "model", "rating", "ci_low", "ci_high", "games")


def write_leaderboards_csv(tables: Mapping[str, RatingTable], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEADERBOARD_HEADER)
        for basis, table in tables.items():
            for model in table.ranked():
                w.writerow([basis, model, repr(table.ratings[model]), repr(table.ci_low[model]),
                            repr(table.ci_high[model]), table.games_played[model]])


def read_leaderboards_csv(path: str | Path) -> dict[str, RatingTable]:
    acc: dict[str, dict[str, dict]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            acc.setdefault(row["basis"], {})[row["model"]] = row
    return {
        basis: RatingTable(
            basis=basis,
            ratings={m: float(r["rating"]) for m, r in rows.items()},
            ci_low={m: float(r["ci_low"]) for m, r in rows.items()},
            ci_high={m: float(r["ci_high"]) for m, r in rows.items()},
            games_played={m: int(r["games"]) for m, r in rows.items()},
        )
        for basis, rows in acc.items()
    }


def ranks_document(tables: Mapping[str, RatingTable]) -> dict:
    models = sorted({m for t in tables.values() for m in t.ratings})
    return {
        "bases": list(tables),
        "models": models,
        "ranks": rank_positions(tables),
        "ratings": {basis: dict(sorted(t.ratings.items())) for basis, t in tables.items()},
    }


def write_ranks_json(tables: Mapping[str, RatingTable], path: str | Path) -> None:
    Path(path).write_text(json.dumps(ranks_document(tables), sort_keys=True, indent=1) + "\n", encoding="utf-8")
