"""Figure and table exports: chart specs, their SVG rendering, and CSV tables.

Every chart is described by a :class:`ChartSpec` holding all of its numbers. The SVG
carries that spec as JSON in its metadata block and a sibling ``.json`` file holds the
same data, so a chart can be audited or re-rendered without rerunning the pipeline.
"""

from __future__ import annotations

import csv
import html
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import ATTRIBUTE_LABELS, AttributeScoreCard, PreferencePair, Verdict
from .errors import DataError
from .rating import HUMAN_PREFERENCE, RatingTable

logger = logging.getLogger(__name__)

CHART_KINDS = ("radar", "bar", "box", "density", "beeswarm")
RADAR_MODES = ("rank", "score")
DENSITY_BINS = 32
VALUE_SUFFIX = "|value"
CI_LOW, CI_HIGH = "|ci_low", "|ci_high"

_RC = {
    "svg.hashsalt": "rationale-eval",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9.0,
}


@dataclass(frozen=True)
class ChartSpec:
    kind: str
    title: str
    series: Mapping[str, tuple[float, ...]]
    axis_labels: tuple[str, ...]
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        series = {str(k): tuple(float(x) for x in v) for k, v in self.series.items()}
        object.__setattr__(self, "series", series)
        object.__setattr__(self, "axis_labels", tuple(str(a) for a in self.axis_labels))
        object.__setattr__(self, "meta", dict(self.meta))
        self.validate()

    def validate(self) -> None:
        if self.kind not in CHART_KINDS:
            raise DataError(f"unknown chart kind {self.kind!r}")
        if not self.series:
            raise DataError(f"chart {self.title!r} has no series")
        for name, values in self.series.items():
            if not values:
                raise DataError(f"chart {self.title!r}: series {name!r} is empty")
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"chart {self.title!r}: series {name!r} has non-finite values")
        n_axes = len(self.axis_labels)
        if self.kind == "radar" and self.axis_labels != ATTRIBUTE_LABELS:
            raise DataError("radar charts need the 12 attribute axes in canonical order")
        if self.kind in ("radar", "bar", "density"):
            bad = [k for k, v in self.series.items() if len(v) != n_axes]
            if bad:
                raise DataError(f"chart {self.title!r}: series {bad} do not have {n_axes} values")
        elif self.kind == "box":
            if tuple(self.series) != self.axis_labels:
                raise DataError(f"chart {self.title!r}: box series must match the axis labels")
        elif self.kind == "beeswarm":
            expected = [k for a in self.axis_labels for k in (a, a + VALUE_SUFFIX)]
            if sorted(self.series) != sorted(expected):
                raise DataError(f"chart {self.title!r}: beeswarm needs a value series per attribute")
            for a in self.axis_labels:
                if len(self.series[a]) != len(self.series[a + VALUE_SUFFIX]):
                    raise DataError(f"chart {self.title!r}: {a} shap/value lengths differ")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "title": self.title, "axis_labels": list(self.axis_labels),
                "series": {k: list(v) for k, v in self.series.items()}, "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ChartSpec":
        return cls(d["kind"], d["title"], d["series"], d["axis_labels"], d.get("meta", {}))

    @classmethod
    def from_json(cls, text: str) -> "ChartSpec":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# score differences and densities

@dataclass(frozen=True)
class FiveNumber:
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float

    @classmethod
    def of(cls, samples: Sequence[float]) -> "FiveNumber":
        q = np.percentile(np.asarray(samples, dtype=float), [0, 25, 50, 75, 100])
        return cls(*(float(v) for v in q))


@dataclass(frozen=True)
class DiffDistribution:
    pair_ids: tuple[str, ...]
    chosen: np.ndarray     # (n, 12) panel-mean cards of the preferred side
    rejected: np.ndarray   # (n, 12)
    ties_excluded: int
    unscored: int

    @property
    def diffs(self) -> np.ndarray:
        return self.chosen - self.rejected

    def samples(self) -> dict[str, list[float]]:
        return {label: [float(v) for v in self.diffs[:, j]] for j, label in enumerate(ATTRIBUTE_LABELS)}

    def summary(self) -> dict[str, FiveNumber]:
        return {label: FiveNumber.of(values) for label, values in self.samples().items()}


def _chosen_rejected(pair: PreferencePair, cards: tuple[AttributeScoreCard, AttributeScoreCard]):
    card_a, card_b = cards
    card_a.require_complete(f" (pair {pair.pair_id}, side A)")
    card_b.require_complete(f" (pair {pair.pair_id}, side B)")
    return (card_a, card_b) if pair.human_verdict is Verdict.A_WINS else (card_b, card_a)


def export_diff_distribution(pairs: Sequence[PreferencePair],
                             cards: Mapping[str, tuple[AttributeScoreCard, AttributeScoreCard]]
                             ) -> tuple[DiffDistribution, ChartSpec]:
    """Chosen minus rejected scores per attribute, over pairs with a decided verdict."""
    ids, chosen, rejected = [], [], []
    ties = unscored = 0
    for pair in pairs:
        if pair.pair_id not in cards:
            unscored += 1
        elif not pair.human_verdict.decided:
            ties += 1
        else:
            c, r = _chosen_rejected(pair, cards[pair.pair_id])
            ids.append(pair.pair_id)
            chosen.append(c.to_array())
            rejected.append(r.to_array())
    if not ids:
        raise DataError(f"no decided, scored pairs ({ties} tie(s), {unscored} unscored)")
    if ties:
        logger.info("difference distribution: excluded %d tie verdict(s)", ties)
    dist = DiffDistribution(tuple(ids), np.array(chosen), np.array(rejected), ties, unscored)
    chart = ChartSpec("box", "Chosen minus rejected score by attribute", dist.samples(), ATTRIBUTE_LABELS,
                      {"pairs": len(ids), "ties_excluded": ties, "unscored": unscored,
                       "quartiles": "linear interpolation"})
    return dist, chart


def export_density(dist: DiffDistribution, bins: int = DENSITY_BINS) -> ChartSpec:
    """Fixed-width histograms of chosen and rejected scores over [0, 1] per attribute."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    centers = tuple(f"{c:.6f}" for c in (edges[:-1] + edges[1:]) / 2)
    series = {}
    for j, label in enumerate(ATTRIBUTE_LABELS):
        for side, data in (("chosen", dist.chosen), ("rejected", dist.rejected)):
            counts, _ = np.histogram(data[:, j], bins=edges)
            series[f"{label}|{side}"] = counts.astype(float)
    return ChartSpec("density", "Chosen vs rejected scores", series, centers,
                     {"bins": bins, "range": [0.0, 1.0], "pairs": len(dist.pair_ids)})


DIFF_SAMPLES_HEADER = ("pair_id", "attribute", "chosen", "rejected", "difference")
DIFF_SUMMARY_HEADER = ("attribute", "n", "min", "q1", "median", "q3", "max")


def write_diff_tables(dist: DiffDistribution, samples_path: str | Path, summary_path: str | Path) -> None:
    with open(samples_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIFF_SAMPLES_HEADER)
        for i, pid in enumerate(dist.pair_ids):
            for j, label in enumerate(ATTRIBUTE_LABELS):
                c, r = float(dist.chosen[i, j]), float(dist.rejected[i, j])
                w.writerow([pid, label, repr(c), repr(r), repr(c - r)])
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIFF_SUMMARY_HEADER)
        for label, s in dist.summary().items():
            w.writerow([label, len(dist.pair_ids), *(repr(v) for v in (s.minimum, s.q1, s.median, s.q3, s.maximum))])


# ---------------------------------------------------------------------------
# leaderboards

def _attribute_tables(leaderboards: Mapping[str, RatingTable]) -> list[RatingTable]:
    present = [leaderboards[label] for label in ATTRIBUTE_LABELS if label in leaderboards]
    if not present:
        raise DataError("radar chart needs at least one attribute leaderboard")
    missing = [label for label in ATTRIBUTE_LABELS if label not in leaderboards]
    if missing:
        raise DataError(f"radar chart needs all 12 attribute leaderboards; missing {missing}")
    return present


def select_models(leaderboards: Mapping[str, RatingTable], models: Sequence[str], top_k: int) -> list[str]:
    """Top ``top_k`` models by human-preference rating, else by mean attribute rank."""
    human = leaderboards.get(HUMAN_PREFERENCE)
    ranks = {label: t.ranks() for label, t in leaderboards.items() if label != HUMAN_PREFERENCE}

    def key(m):
        mean_rank = float(np.mean([r[m] for r in ranks.values() if m in r]))
        if human is not None and m in human.ratings:
            return (0, -human.ratings[m], mean_rank, m)
        return (1, 0.0, mean_rank, m)

    return sorted(models, key=key)[:top_k]


def export_radar(leaderboards: Mapping[str, RatingTable], mode: str = "rank", top_k: int = 7) -> ChartSpec:
    """One polygon per model over the 12 attribute tables.

    Rank mode stores competition ranks; the renderer maps rank ``r`` to radius
    ``max_rank + 1 - r`` so rank 1 sits on the outer ring. Models missing from any
    attribute table are dropped with a warning and listed in ``meta["dropped"]``.
    """
    if mode not in RADAR_MODES:
        raise DataError(f"radar mode must be one of {RADAR_MODES}, got {mode!r}")
    if top_k < 1:
        raise DataError("top_k must be >= 1")
    tables = _attribute_tables(leaderboards)
    every = sorted({m for t in tables for m in t.ratings})
    complete = [m for m in every if all(m in t.ratings for t in tables)]
    dropped = [m for m in every if m not in complete]
    for m in dropped:
        absent = [t.basis for t in tables if m not in t.ratings]
        logger.warning("radar: dropping %s, absent from %s", m, ", ".join(absent))
    if not complete:
        raise DataError("no model appears in every attribute leaderboard")
    chosen = select_models(leaderboards, complete, top_k)
    max_rank = max(len(t.ratings) for t in tables)
    ranks = [t.ranks() for t in tables]
    if mode == "rank":
        series = {m: [r[m] for r in ranks] for m in chosen}
    else:
        series = {m: [t.ratings[m] for t in tables] for m in chosen}
    title = "Attribute ELO ranks" if mode == "rank" else "Attribute ELO ratings"
    return ChartSpec("radar", title, series, ATTRIBUTE_LABELS,
                     {"mode": mode, "max_rank": max_rank, "top_k": top_k, "dropped": dropped})


def radar_radius(spec: ChartSpec, value: float) -> float:
    """Plotted radius of a vertex value; rank mode inverts so rank 1 is outermost."""
    if spec.meta.get("mode") == "rank":
        return spec.meta["max_rank"] + 1 - value
    return value


def export_elo_bar(table: RatingTable, title: str | None = None) -> ChartSpec:
    """Ratings of one leaderboard with their bootstrap intervals, best first."""
    models = table.ranked()
    series = {
        "rating": [table.ratings[m] for m in models],
        "rating" + CI_LOW: [table.ci_low[m] for m in models],
        "rating" + CI_HIGH: [table.ci_high[m] for m in models],
    }
    return ChartSpec("bar", title or f"ELO: {table.basis}", series, models,
                     {"basis": table.basis, "games": [table.games_played[m] for m in models]})


def export_attribute_bars(leaderboards: Mapping[str, RatingTable], models: Sequence[str]) -> ChartSpec:
    """Grouped ratings: one bar group per available attribute, one bar per model."""
    labels = [label for label in ATTRIBUTE_LABELS if label in leaderboards]
    if not labels:
        raise DataError("no attribute leaderboards to chart")
    tables = [leaderboards[label] for label in labels]
    series = {}
    for m in models:
        if all(m in t.ratings for t in tables):
            series[m] = [t.ratings[m] for t in tables]
    if not series:
        raise DataError("none of the requested models appears in every attribute leaderboard")
    return ChartSpec("bar", "Attribute ELO ratings", series, labels, {"models": list(series)})


# ---------------------------------------------------------------------------
# attribution

def export_importance_bar(names: Sequence[str], mean_abs: Sequence[float], signs: Sequence[int],
                          title: str = "Mean |SHAP| by attribute") -> ChartSpec:
    """Bars in the given order (callers pass descending importance)."""
    return ChartSpec("bar", title, {"mean_abs_shap": list(mean_abs)}, list(names),
                     {"direction_sign": [int(s) for s in signs]})


def export_beeswarm_chart(rows: Sequence[tuple[str, float, float]], order: Sequence[str] | None = None,
                          title: str = "SHAP values by attribute") -> ChartSpec:
    """Group (attribute, phi, feature value) rows; ``order`` fixes the attribute order."""
    grouped: dict[str, tuple[list[float], list[float]]] = {}
    for name, phi, value in rows:
        phis, values = grouped.setdefault(name, ([], []))
        phis.append(phi)
        values.append(value)
    labels = list(order) if order is not None else sorted(grouped, key=lambda a: -np.mean(np.abs(grouped[a][0])))
    series = {}
    for a in labels:
        if a not in grouped:
            raise DataError(f"beeswarm: no rows for {a!r}")
        series[a] = grouped[a][0]
        series[a + VALUE_SUFFIX] = grouped[a][1]
    return ChartSpec("beeswarm", title, series, labels)


# ---------------------------------------------------------------------------
# rendering

def _palette(n: int) -> list:
    from matplotlib import colormaps
    cmap = colormaps["tab10"]
    return [cmap(i % 10) for i in range(n)]


def _draw_radar(fig, spec: ChartSpec) -> None:
    ax = fig.add_subplot(projection="polar")
    ax.set_theta_offset(math.pi / 2)
    ax.set_theta_direction(-1)
    n = len(spec.axis_labels)
    angles = [2 * math.pi * i / n for i in range(n)]
    for color, (name, values) in zip(_palette(len(spec.series)), spec.series.items()):
        radii = [radar_radius(spec, v) for v in values]
        ax.plot(angles + angles[:1], radii + radii[:1], color=color, linewidth=1.2, label=name)
        ax.fill(angles, radii, color=color, alpha=0.08)
    ax.set_xticks(angles)
    ax.set_xticklabels(spec.axis_labels)
    if spec.meta.get("mode") == "rank":
        top = spec.meta["max_rank"]
        ticks = list(range(1, top + 1))
        ax.set_ylim(0, top + 0.5)
        ax.set_yticks([top + 1 - r for r in ticks])
        ax.set_yticklabels([str(r) for r in ticks])
    else:
        values = [v for s in spec.series.values() for v in s]
        pad = max(1.0, 0.1 * (max(values) - min(values)))
        ax.set_ylim(min(values) - pad, max(values) + pad)
    ax.legend(loc="upper right", bbox_to_anchor=(1.35, 1.1), fontsize=7)


def _draw_bar(fig, spec: ChartSpec) -> None:
    ax = fig.add_subplot()
    names = [k for k in spec.series if not k.endswith((CI_LOW, CI_HIGH))]
    n = len(spec.axis_labels)
    width = 0.8 / len(names)
    x = np.arange(n)
    for i, (color, name) in enumerate(zip(_palette(len(names)), names)):
        values = np.array(spec.series[name])
        pos = x - 0.4 + width * (i + 0.5)
        err = None
        if name + CI_LOW in spec.series:
            lo, hi = np.array(spec.series[name + CI_LOW]), np.array(spec.series[name + CI_HIGH])
            err = np.vstack([values - lo, hi - values])
        ax.bar(pos, values, width=width, color=color, yerr=err, capsize=2, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(spec.axis_labels, rotation=45, ha="right")
    if len(names) > 1:
        ax.legend(fontsize=7)
    if "rating" in spec.series:
        lo = min(spec.series.get("rating" + CI_LOW, spec.series["rating"]))
        hi = max(spec.series.get("rating" + CI_HIGH, spec.series["rating"]))
        pad = max(1.0, 0.1 * (hi - lo))
        ax.set_ylim(lo - pad, hi + pad)


def _draw_box(fig, spec: ChartSpec) -> None:
    ax = fig.add_subplot()
    stats = []
    for label in spec.axis_labels:
        s = FiveNumber.of(spec.series[label])
        stats.append({"label": label, "whislo": s.minimum, "q1": s.q1, "med": s.median,
                      "q3": s.q3, "whishi": s.maximum, "fliers": []})
    ax.bxp(stats, showfliers=False)
    ax.axhline(0.0, color="grey", linewidth=0.6, linestyle="--")
    ax.set_xticks(range(1, len(stats) + 1))
    ax.set_xticklabels(spec.axis_labels, rotation=45, ha="right")
    ax.set_ylabel("chosen - rejected")


def _draw_density(fig, spec: ChartSpec) -> None:
    attrs = list(dict.fromkeys(k.split("|")[0] for k in spec.series))
    cols = 4
    rows = math.ceil(len(attrs) / cols)
    edges = np.linspace(*spec.meta.get("range", [0.0, 1.0]), len(spec.axis_labels) + 1)
    colors = _palette(2)
    for i, a in enumerate(attrs):
        ax = fig.add_subplot(rows, cols, i + 1)
        for color, side in zip(colors, ("chosen", "rejected")):
            key = f"{a}|{side}"
            if key in spec.series:
                ax.stairs(spec.series[key], edges, color=color, label=side)
        ax.set_title(a, fontsize=8)
        ax.tick_params(labelsize=6)
        if i == 0:
            ax.legend(fontsize=6)


def _draw_beeswarm(fig, spec: ChartSpec) -> None:
    ax = fig.add_subplot()
    labels = spec.axis_labels
    for row, a in enumerate(labels):
        phi = np.array(spec.series[a])
        value = np.array(spec.series[a + VALUE_SUFFIX])
        span = value.max() - value.min()
        shade = (value - value.min()) / span if span > 0 else np.full(len(value), 0.5)
        # deterministic vertical spread: rank within the attribute, folded into a band
        order = np.argsort(np.argsort(phi, kind="stable"), kind="stable")
        offset = ((order % 9) - 4) * 0.04
        y = len(labels) - 1 - row + offset
        ax.scatter(phi, y, c=shade, cmap="coolwarm", vmin=0, vmax=1, s=4, linewidths=0)
    ax.axvline(0.0, color="grey", linewidth=0.6)
    ax.set_yticks(range(len(labels)))
    ax.set_yticklabels(list(reversed(labels)))
    ax.set_xlabel("SHAP value (log-odds)")


_DRAW = {"radar": _draw_radar, "bar": _draw_bar, "box": _draw_box, "density": _draw_density,
         "beeswarm": _draw_beeswarm}
_SIZE = {"radar": (7.0, 6.0), "bar": (8.0, 4.5), "box": (8.0, 4.5), "density": (10.0, 7.0),
         "beeswarm": (7.0, 5.5)}


def svg_bytes(spec: ChartSpec) -> bytes:
    """Render ``spec`` to SVG; identical specs give identical bytes."""
    import matplotlib
    from matplotlib.backends.backend_svg import FigureCanvasSVG
    from matplotlib.figure import Figure

    spec.validate()
    rc = dict(_RC)
    rc["axes.prop_cycle"] = matplotlib.cycler(color=_palette(10))
    with matplotlib.rc_context(rc):
        fig = Figure(figsize=_SIZE[spec.kind])
        FigureCanvasSVG(fig)
        _DRAW[spec.kind](fig, spec)
        fig.suptitle(spec.title)
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={
            "Title": spec.title,
            "Date": None,
            "Creator": "rationale-eval",
            "Description": json.dumps(spec.to_dict(), ensure_ascii=False, separators=(",", ":")),
        })
    return buf.getvalue()


def render_svg(spec: ChartSpec, path: str | Path) -> Path:
    """Write ``path`` (SVG) and its sibling ``.json`` data file; returns the SVG path."""
    path = Path(path)
    data = svg_bytes(spec)
    path.write_bytes(data)
    path.with_suffix(".json").write_text(spec.to_json() + "\n", encoding="utf-8")
    return path


def load_chart(path: str | Path) -> ChartSpec:
    """Read a chart's data file (given either the ``.json`` or the ``.svg`` path)."""
    return ChartSpec.from_json(Path(path).with_suffix(".json").read_text(encoding="utf-8"))


def embedded_chart(svg_path: str | Path) -> ChartSpec:
    """Recover the chart data embedded in an SVG's metadata block."""
    text = Path(svg_path).read_text(encoding="utf-8")
    m = re.search(r"<dc:description>(.*?)</dc:description>", text, re.S)
    if not m:
        raise DataError(f"{svg_path}: no embedded chart data")
    return ChartSpec.from_json(html.unescape(m.group(1)))
