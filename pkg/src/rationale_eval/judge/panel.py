"""Scoring preference pairs with a panel of judges and persisting the verdicts."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..core import AttributeScoreCard, JudgeVerdict, PreferencePair, aggregate_panel
from ..errors import ConfigError, JudgeEndpointError, OfflineCacheMiss, VerdictError
from .client import JudgeClient, JudgeConfig
from .parsing import parse_verdict
from .prompts import PromptTemplate, render_prompt

logger = logging.getLogger(__name__)

SIDES = ("A", "B")


@dataclass
class PanelResult:
    pair_id: str
    verdicts: dict[str, list[JudgeVerdict]] = field(default_factory=lambda: {"A": [], "B": []})
    failures: dict[tuple[str, str], Exception] = field(default_factory=dict)

    @property
    def verdicts_a(self) -> list[JudgeVerdict]:
        return self.verdicts["A"]

    @property
    def verdicts_b(self) -> list[JudgeVerdict]:
        return self.verdicts["B"]

    @property
    def scored(self) -> bool:
        return bool(self.verdicts["A"]) and bool(self.verdicts["B"])


def score_rationale(client: JudgeClient, config: JudgeConfig, template: PromptTemplate,
                    question: str, rationale: str) -> JudgeVerdict:
    """One judge, one rationale. Unparseable or incomplete replies are re-requested whole."""
    prompt = render_prompt(template, question, rationale)
    last: VerdictError | None = None
    for attempt in range(config.max_retries + 1):
        raw = client.call(config, prompt, attempt=attempt)
        try:
            return parse_verdict(raw, config)
        except VerdictError as exc:
            last = exc
            logger.info("judge %s: unusable verdict on attempt %d: %s", config.judge_id, attempt, exc)
    raise last


def score_pair_with_panel(pair: PreferencePair, panel: Sequence[JudgeConfig],
                          templates: Mapping[str, PromptTemplate], client: JudgeClient,
                          max_workers: int = 4) -> PanelResult:
    """Score both sides of ``pair`` independently with every judge on the panel."""
    if not panel:
        raise ConfigError("judge panel is empty")
    for judge in panel:
        if judge.judge_id not in templates:
            raise ConfigError(f"no prompt template for judge {judge.judge_id!r}")

    jobs = [(side, judge) for side in SIDES for judge in panel]

    def run(job):
        side, judge = job
        rec = pair.side(side)
        try:
            return score_rationale(client, judge, templates[judge.judge_id], pair.question, rec.rationale_text)
        except OfflineCacheMiss:
            raise
        except (JudgeEndpointError, VerdictError) as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        outcomes = list(pool.map(run, jobs))

    result = PanelResult(pair.pair_id)
    for (side, judge), outcome in zip(jobs, outcomes):
        if isinstance(outcome, JudgeVerdict):
            result.verdicts[side].append(outcome)
        else:
            result.failures[(side, judge.judge_id)] = outcome
            logger.warning("pair %s side %s judge %s failed: %s", pair.pair_id, side, judge.judge_id, outcome)
    return result


def score_pairs(pairs: Sequence[PreferencePair], panel: Sequence[JudgeConfig],
                templates: Mapping[str, PromptTemplate], client: JudgeClient,
                max_in_flight: int = 8) -> list[PanelResult]:
    """Score many pairs; ``max_in_flight`` caps concurrent requests across the whole run."""
    if not panel:
        raise ConfigError("judge panel is empty")
    per_pair = max(1, min(2 * len(panel), max_in_flight))
    outer = max(1, max_in_flight // per_pair)
    with ThreadPoolExecutor(max_workers=outer) as pool:
        return list(pool.map(lambda p: score_pair_with_panel(p, panel, templates, client, per_pair), pairs))


# ---------------------------------------------------------------------------
# Verdict store: JSONL, one line per (pair_id, side, judge_id)

def dump_verdicts(results: Iterable[PanelResult], panel: Sequence[JudgeConfig], path: str | Path) -> None:
    order = [j.judge_id for j in panel]
    with open(path, "w", encoding="utf-8") as fh:
        for res in results:
            for side in SIDES:
                by_judge = {v.judge_id: v for v in res.verdicts[side]}
                for jid in order:
                    rec = {"pair_id": res.pair_id, "side": side, "judge_id": jid}
                    if jid in by_judge:
                        rec["status"] = "ok"
                        rec["verdict"] = by_judge[jid].to_dict()
                    else:
                        rec["status"] = "failed"
                        rec["error"] = str(res.failures.get((side, jid), "not scored"))
                    fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def load_verdicts(path: str | Path) -> dict[tuple[str, str, str], JudgeVerdict]:
    """Successful verdicts keyed by (pair_id, side, judge_id)."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["status"] == "ok":
                out[(rec["pair_id"], rec["side"], rec["judge_id"])] = JudgeVerdict.from_dict(rec["verdict"])
    return out


def panel_cards(verdicts: Mapping[tuple[str, str, str], JudgeVerdict], pair_ids: Iterable[str],
                judges: Sequence[str] | None = None) -> dict[str, tuple[AttributeScoreCard, AttributeScoreCard]]:
    """Panel-mean cards per pair, restricted to ``judges`` if given.

    Pairs lacking any verdict on either side are left out (unscored).
    """
    grouped: dict[tuple[str, str], list[JudgeVerdict]] = {}
    for (p, s, j), v in verdicts.items():
        if judges is None or j in judges:
            grouped.setdefault((p, s), []).append(v)
    out = {}
    for pid in pair_ids:
        sides = [grouped.get((pid, side), []) for side in SIDES]
        if all(sides):
            out[pid] = (aggregate_panel(sides[0]), aggregate_panel(sides[1]))
    return out
