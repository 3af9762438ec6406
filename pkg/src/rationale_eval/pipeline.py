"""Pipeline stages. Each reads its predecessor's files under the output directory and
writes its own, so stages can be rerun individually; judge replies come from the
response cache whenever possible.

Layout under ``out``::

    stages/   pairs.jsonl, filter_decisions.jsonl, filtered_pairs.jsonl, verdicts.jsonl,
              features.csv, model.json
    tables/   *.csv (plus ranks.json and shap_metadata.json)
    charts/   *.svg with a sibling *.json data file each
    cache/    content-addressed judge replies (unless run.cache points elsewhere)
    run.json  configuration and content hashes of inputs, model, cache and outputs
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Callable

import numpy as np

from . import attribution, report
from .config import RunConfig
from .core import ATTRIBUTE_LABELS, AttributeScoreCard, PreferencePair, aggregate_panel, score_difference
from .errors import DataError, InvariantError, JudgeEndpointError, MissingStageError
from .ingest import (dump_decisions, dump_pairs, filter_reasoning_pairs, load_annotations, load_pairs,
                     summarize_decisions)
from .judge import JudgeClient, ResponseCache, dump_verdicts, load_verdicts, panel_cards, score_pairs
from .predictor import Ensemble, evaluate, train
from .rating import (HUMAN_PREFERENCE, per_attribute_leaderboard, read_leaderboards_csv, write_leaderboards_csv,
                     write_ranks_json)

logger = logging.getLogger(__name__)

STAGES = ("filter", "judge", "train", "shap", "elo", "report")
EFFICIENCY_TOLERANCE = 1e-9

PAIRS = "stages/pairs.jsonl"
DECISIONS = "stages/filter_decisions.jsonl"
FILTERED = "stages/filtered_pairs.jsonl"
VERDICTS = "stages/verdicts.jsonl"
FEATURES = "stages/features.csv"
MODEL = "stages/model.json"
LEADERBOARDS = "tables/leaderboards.csv"
RANKS = "tables/ranks.json"
IMPORTANCE = "tables/shap_importance.csv"
BEESWARM = "tables/shap_beeswarm.csv"
SHAP_META = "tables/shap_metadata.json"


@dataclass
class StageResult:
    stage: str
    outputs: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    network_calls: int = 0
    cache_hits: int = 0


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class Workspace:
    def __init__(self, config: RunConfig):
        self.config = config
        self.root = config.out_dir

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def require(self, stage: str, required: str, rel: str) -> Path:
        p = self.root / rel
        if not p.is_file():
            raise MissingStageError(stage, required, rel)
        return p

    def client(self) -> JudgeClient:
        return JudgeClient(ResponseCache(self.config.cache_root), offline=self.config.offline)


# ---------------------------------------------------------------------------
# shared readers

def _read_pairs(path: Path) -> list[PreferencePair]:
    with open(path, encoding="utf-8") as fh:
        return [PreferencePair.from_dict(json.loads(line)) for line in fh if line.strip()]


def filtered_pairs(ws: Workspace, stage: str) -> list[PreferencePair]:
    return _read_pairs(ws.require(stage, "filter", FILTERED))


def score_cards(ws: Workspace, stage: str, pairs: list[PreferencePair],
                judges: tuple[str, ...] | None = None) -> dict[str, tuple[AttributeScoreCard, AttributeScoreCard]]:
    """Panel-mean (or annotator-mean) cards for every pair scored on both sides."""
    ids = [p.pair_id for p in pairs]
    if ws.config.score_source == "annotations":
        grouped = load_annotations(ws.config.annotations_path)
        return {pid: (aggregate_panel(grouped[(pid, "A")]), aggregate_panel(grouped[(pid, "B")]))
                for pid in ids if (pid, "A") in grouped and (pid, "B") in grouped}
    verdicts = load_verdicts(ws.require(stage, "judge", VERDICTS))
    if judges is None:
        judges = tuple(j.judge_id for j in ws.config.panel)
    return panel_cards(verdicts, ids, judges)


def _label(pair: PreferencePair) -> float:
    return pair.human_verdict.label


# ---------------------------------------------------------------------------
# stages

def cmd_filter(ws: Workspace) -> StageResult:
    config = ws.config
    pairs = load_pairs(config.data_path, config.data_format)
    dump_pairs(pairs, ws.path(PAIRS))
    result = StageResult("filter", [PAIRS, DECISIONS, FILTERED])
    if config.filter_enabled:
        judge = config.classifier()
        with ws.client() as client:
            kept, decisions = filter_reasoning_pairs(pairs, lambda prompt: client.call(judge, prompt),
                                                     config.filter_keep, max_workers=config.max_in_flight)
            result.network_calls, result.cache_hits = client.network_calls, client.cache_hits
        summary = summarize_decisions(decisions)
        result.summary = {"input": len(pairs), "kept": summary.kept, "dropped": summary.dropped,
                          "undecided": summary.undecided, "by_category": dict(sorted(summary.by_category.items()))}
    else:
        kept, decisions = list(pairs), []
        result.summary = {"input": len(pairs), "kept": len(pairs), "dropped": 0, "undecided": 0}
    dump_decisions(decisions, ws.path(DECISIONS))
    dump_pairs(kept, ws.path(FILTERED))
    logger.info("filter: kept %d of %d pairs", len(kept), len(pairs))
    return result


def cmd_judge(ws: Workspace) -> StageResult:
    config = ws.config
    pairs = filtered_pairs(ws, "judge")
    result = StageResult("judge", [VERDICTS])
    if config.score_source == "annotations":
        logger.info("judge: scores come from annotations; nothing to do")
        ws.path(VERDICTS).write_text("", encoding="utf-8")
        return result
    with ws.client() as client:
        results = score_pairs(pairs, config.judges, config.templates, client, config.max_in_flight)
        result.network_calls, result.cache_hits = client.network_calls, client.cache_hits
    dump_verdicts(results, config.judges, ws.path(VERDICTS))
    failures = sum(len(r.failures) for r in results)
    scored = sum(r.scored for r in results)
    result.summary = {"pairs": len(pairs), "scored": scored, "unscored": len(pairs) - scored,
                      "failed_calls": failures}
    if pairs and scored == 0:
        errors = [e for r in results for e in r.failures.values()]
        message = f"judge: no pair could be scored ({failures} failed judge calls; see {VERDICTS})"
        if errors and all(isinstance(e, JudgeEndpointError) for e in errors):
            raise JudgeEndpointError(message + f"; first error: {errors[0]}")
        raise DataError(message)
    logger.info("judge: %d/%d pairs scored, %d failed judge calls, %d network calls, %d cache hits",
                scored, len(pairs), failures, client.network_calls, client.cache_hits)
    return result


FEATURE_HEADER = ("pair_id", "label", *ATTRIBUTE_LABELS)


def cmd_train(ws: Workspace) -> StageResult:
    config = ws.config
    pairs = filtered_pairs(ws, "train")
    cards = score_cards(ws, "train", pairs)
    rows = [(p.pair_id, _label(p), score_difference(*cards[p.pair_id])) for p in pairs if p.pair_id in cards]
    if not rows:
        raise DataError("train: no scored pairs")
    with open(ws.path(FEATURES), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURE_HEADER)
        for pid, label, diff in rows:
            w.writerow([pid, repr(label), *(repr(float(v)) for v in diff)])
    X = np.array([r[2] for r in rows])
    y = np.array([r[1] for r in rows])
    model = train(X, y, config.train)
    losses = np.array(model.train_loss)
    if np.any(np.diff(losses) > 0):
        raise InvariantError("training loss increased between rounds")
    ws.path(MODEL).write_text(model.to_json(), encoding="utf-8")
    metrics = evaluate(model, X, y)
    with open(ws.path("tables/predictor_metrics.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("metric", "value"))
        w.writerow(("pairs", len(rows)))
        w.writerow(("train_accuracy", repr(metrics["accuracy"])))
        w.writerow(("train_log_loss", repr(metrics["log_loss"])))
        w.writerow(("initial_loss", repr(float(losses[0]))))
        w.writerow(("final_loss", repr(float(losses[-1]))))
    return StageResult("train", [FEATURES, MODEL, "tables/predictor_metrics.csv"],
                       {"pairs": len(rows), "model_sha256": model.digest(), **metrics})


def read_features(path: Path) -> tuple[list[str], np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != FEATURE_HEADER:
            raise DataError(f"{path}: unexpected header")
        ids, labels, X = [], [], []
        for row in reader:
            ids.append(row[0])
            labels.append(float(row[1]))
            X.append([float(v) for v in row[2:]])
    return ids, np.array(labels), np.array(X)


def cmd_shap(ws: Workspace) -> StageResult:
    config = ws.config
    model_path = ws.require("shap", "train", MODEL)
    _, _, X = read_features(ws.require("shap", "train", FEATURES))
    model = Ensemble.from_json(model_path.read_text(encoding="utf-8"))
    background = attribution.make_background(X, config.background_rows, config.attribution_seed,
                                             config.full_background)
    result = attribution.explain(model, X, background, method=config.attribution_method)
    worst = float(np.max(np.abs(result.efficiency_residual)))
    if worst >= EFFICIENCY_TOLERANCE:
        raise InvariantError(f"Shapley efficiency residual {worst:.3g} exceeds {EFFICIENCY_TOLERANCE}")
    attribution.write_importance_csv(result, ws.path(IMPORTANCE))
    attribution.write_beeswarm_csv(attribution.export_beeswarm(result, X), X.shape[1], ws.path(BEESWARM))
    attribution.write_metadata(ws.path(SHAP_META), model, background, instances=int(len(X)),
                               method=config.attribution_method)
    top = [(a.value, s) for a, _, s in attribution.attribute_importance(result)[:3]]
    return StageResult("shap", [IMPORTANCE, BEESWARM, SHAP_META],
                       {"instances": int(len(X)), "top3": [a for a, _ in top],
                        "top3_sign": [s for _, s in top], "max_efficiency_residual": worst})


def cmd_elo(ws: Workspace) -> StageResult:
    config = ws.config
    pairs = filtered_pairs(ws, "elo")
    cards = score_cards(ws, "elo", pairs)
    tables = per_attribute_leaderboard(pairs, cards, config.elo, config.elo_attributes, include_human=True)
    write_leaderboards_csv(tables, ws.path(LEADERBOARDS))
    write_ranks_json(tables, ws.path(RANKS))
    outputs = [LEADERBOARDS, RANKS]
    if config.per_judge_elo and config.score_source == "judges":
        for judge in config.panel:
            judge_cards = score_cards(ws, "elo", pairs, (judge.judge_id,))
            if not judge_cards:
                logger.warning("elo: judge %s scored no pair; no per-judge table", judge.judge_id)
                continue
            per = per_attribute_leaderboard(pairs, judge_cards, config.elo, config.elo_attributes,
                                            include_human=False)
            rel = f"tables/leaderboards_{judge.judge_id}.csv"
            write_leaderboards_csv(per, ws.path(rel))
            outputs.append(rel)
    return StageResult("elo", outputs, {"tables": len(tables), "scored_pairs": len(cards),
                                        "models": len({m for t in tables.values() for m in t.ratings})})


def cmd_report(ws: Workspace) -> StageResult:
    config = ws.config
    pairs = filtered_pairs(ws, "report")
    cards = score_cards(ws, "report", pairs)
    tables = read_leaderboards_csv(ws.require("report", "elo", LEADERBOARDS))
    importance_path = ws.require("report", "shap", IMPORTANCE)
    beeswarm_path = ws.require("report", "shap", BEESWARM)
    outputs = []

    def chart(spec: report.ChartSpec, name: str) -> None:
        rel = f"charts/{name}.svg"
        report.render_svg(spec, ws.path(rel))
        outputs.extend([rel, f"charts/{name}.json"])

    dist, box = report.export_diff_distribution(pairs, cards)
    report.write_diff_tables(dist, ws.path("tables/diff_samples.csv"), ws.path("tables/diff_summary.csv"))
    outputs += ["tables/diff_samples.csv", "tables/diff_summary.csv"]
    chart(box, "diff_box")
    chart(report.export_density(dist), "score_density")

    attribute_tables = [label for label in ATTRIBUTE_LABELS if label in tables]
    if len(attribute_tables) == len(ATTRIBUTE_LABELS):
        for mode in report.RADAR_MODES:
            chart(report.export_radar(tables, mode, config.top_k), f"radar_{mode}")
    else:
        logger.warning("report: radar charts need all 12 attribute leaderboards; have %d", len(attribute_tables))
    if HUMAN_PREFERENCE in tables:
        chart(report.export_elo_bar(tables[HUMAN_PREFERENCE], "ELO: human preference"), "elo_human")
    if attribute_tables:
        models = sorted({m for label in attribute_tables for m in tables[label].ratings})
        top = report.select_models(tables, models, config.top_k)
        chart(report.export_attribute_bars(tables, top), "elo_attributes")

    with open(importance_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    chart(report.export_importance_bar([r["attribute"] for r in rows], [float(r["mean_abs_shap"]) for r in rows],
                                       [int(r["direction_sign"]) for r in rows]), "shap_importance")
    chart(report.export_beeswarm_chart(attribution.read_beeswarm_csv(beeswarm_path),
                                       order=[r["attribute"] for r in rows]), "shap_beeswarm")
    return StageResult("report", outputs, {"charts": sum(o.endswith(".svg") for o in outputs),
                                           "decided_pairs": len(dist.pair_ids),
                                           "ties_excluded": dist.ties_excluded})


COMMANDS: dict[str, Callable[[Workspace], StageResult]] = {
    "filter": cmd_filter, "judge": cmd_judge, "train": cmd_train,
    "shap": cmd_shap, "elo": cmd_elo, "report": cmd_report,
}


# ---------------------------------------------------------------------------
# provenance

def _package_version() -> str:
    try:
        return version("rationale-eval")
    except PackageNotFoundError:
        return "unknown"


def write_run_record(ws: Workspace, results: list[StageResult]) -> Path:
    """Merge stage results into run.json. Content is a pure function of inputs and outputs."""
    path = ws.path("run.json")
    previous = json.loads(path.read_text(encoding="utf-8")) if path.is_file() else {}
    stages = previous.get("stages", {})
    for r in results:
        stages[r.stage] = {"outputs": {rel: sha256_file(ws.root / rel) for rel in r.outputs},
                           "summary": r.summary}
    config = ws.config
    inputs = {"data": sha256_file(config.data_path)}
    if config.annotations_path is not None:
        inputs["annotations"] = sha256_file(config.annotations_path)
    model = ws.root / MODEL
    cache = ResponseCache(config.cache_root)
    record = {
        "tool": "rationale-eval",
        "version": _package_version(),
        "config": config.describe(),
        "inputs": inputs,
        "model_sha256": sha256_file(model) if model.is_file() else None,
        "cache": {"entries": len(cache.keys()), "state_sha256": cache.state_digest()},
        "stages": {s: stages[s] for s in STAGES if s in stages},
    }
    path.write_text(json.dumps(record, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def run_stages(config: RunConfig, stages: list[str]) -> list[StageResult]:
    ws = Workspace(config)
    ws.root.mkdir(parents=True, exist_ok=True)
    results = []
    try:
        for stage in stages:
            logger.info("stage %s", stage)
            results.append(COMMANDS[stage](ws))
    finally:
        if results:
            write_run_record(ws, results)
    return results


def cmd_all(config: RunConfig) -> list[StageResult]:
    return run_stages(config, list(STAGES))
