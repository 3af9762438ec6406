"""Run configuration: a TOML file plus command-line overrides."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import ATTRIBUTES, AttributeName
from .errors import ConfigError, DataError
from .ingest import CATEGORIES, DEFAULT_KEEP
from .judge.client import JudgeConfig
from .judge.prompts import BUILTIN_TEMPLATE_IDS, PromptTemplate, builtin_template
from .predictor import TrainConfig
from .rating import EloConfig

DATA_FORMATS = ("arena_jsonl", "mtbench_jsonl")
SCORE_SOURCES = ("judges", "annotations")
ATTRIBUTION_METHODS = ("leaf", "enumerate")

_SECTIONS = {
    "data": {"path", "format", "annotations"},
    "filter": {"enabled", "keep", "judge"},
    "judges": None,
    "scores": {"source"},
    "predictor": {f.name for f in dataclasses.fields(TrainConfig)},
    "attribution": {"background_rows", "full_background", "method", "seed"},
    "elo": {f.name for f in dataclasses.fields(EloConfig)} | {"attributes", "per_judge"},
    "report": {"top_k"},
    "run": {"out", "cache", "max_in_flight", "offline", "seed"},
}
_JUDGE_KEYS = {f.name for f in dataclasses.fields(JudgeConfig)} | {"template", "template_file"} - {"template_id"}


@dataclass(frozen=True)
class RunConfig:
    data_path: Path
    data_format: str = "arena_jsonl"
    annotations_path: Path | None = None
    judges: tuple[JudgeConfig, ...] = ()
    templates: Mapping[str, PromptTemplate] = field(default_factory=dict)
    filter_enabled: bool = True
    filter_keep: frozenset[str] = DEFAULT_KEEP
    filter_judge: str | None = None
    score_source: str = "judges"
    active_judges: tuple[str, ...] | None = None
    train: TrainConfig = TrainConfig()
    background_rows: int = 256
    full_background: bool = False
    attribution_method: str = "leaf"
    attribution_seed: int = 0
    elo: EloConfig = EloConfig()
    elo_attributes: tuple[AttributeName, ...] = ATTRIBUTES
    per_judge_elo: bool = False
    top_k: int = 7
    out_dir: Path = Path("out")
    cache_dir: Path | None = None
    max_in_flight: int = 8
    offline: bool = False

    @property
    def cache_root(self) -> Path:
        return self.cache_dir if self.cache_dir is not None else self.out_dir / "cache"

    @property
    def panel(self) -> tuple[JudgeConfig, ...]:
        """Judges whose scores are used downstream (all of them unless restricted)."""
        if self.active_judges is None:
            return self.judges
        return tuple(j for j in self.judges if j.judge_id in self.active_judges)

    def classifier(self) -> JudgeConfig:
        wanted = self.filter_judge or self.judges[0].judge_id
        return next(j for j in self.judges if j.judge_id == wanted)

    def validate(self) -> "RunConfig":
        if self.data_format not in DATA_FORMATS:
            raise ConfigError(f"data.format must be one of {DATA_FORMATS}, got {self.data_format!r}")
        if not self.data_path.is_file():
            raise ConfigError(f"data.path does not exist: {self.data_path}")
        if self.annotations_path is not None and not self.annotations_path.is_file():
            raise ConfigError(f"data.annotations does not exist: {self.annotations_path}")
        if self.score_source not in SCORE_SOURCES:
            raise ConfigError(f"scores.source must be one of {SCORE_SOURCES}")
        if self.score_source == "annotations" and self.annotations_path is None:
            raise ConfigError("scores.source = 'annotations' needs data.annotations")
        ids = [j.judge_id for j in self.judges]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"judge ids must be unique, got {ids}")
        if not self.judges and (self.filter_enabled or self.score_source == "judges"):
            raise ConfigError("at least one [[judges]] entry is required")
        for j in self.judges:
            tmpl = self.templates.get(j.judge_id)
            if tmpl is None:
                raise ConfigError(f"judge {j.judge_id}: no prompt template")
            if tmpl.scale_max != j.native_scale_max:
                raise ConfigError(f"judge {j.judge_id}: template scale {tmpl.scale_max:g} does not match "
                                  f"native_scale_max {j.native_scale_max:g}")
        if self.filter_judge is not None and self.filter_judge not in ids:
            raise ConfigError(f"filter.judge {self.filter_judge!r} is not on the panel")
        unknown = set(self.filter_keep) - set(CATEGORIES)
        if unknown:
            raise ConfigError(f"filter.keep has unknown categories {sorted(unknown)}; choose from {CATEGORIES}")
        if self.active_judges is not None:
            missing = set(self.active_judges) - set(ids)
            if missing:
                raise ConfigError(f"--judges names unknown judge(s) {sorted(missing)}")
            if not self.active_judges:
                raise ConfigError("--judges selects no judge")
        if self.attribution_method not in ATTRIBUTION_METHODS:
            raise ConfigError(f"attribution.method must be one of {ATTRIBUTION_METHODS}")
        if self.background_rows < 1:
            raise ConfigError("attribution.background_rows must be >= 1")
        if not self.elo_attributes:
            raise ConfigError("elo.attributes selects no attribute")
        if self.top_k < 1:
            raise ConfigError("report.top_k must be >= 1")
        if self.max_in_flight < 1:
            raise ConfigError("run.max_in_flight must be >= 1")
        return self

    def describe(self) -> dict:
        """JSON-ready view for run.json. Paths are reduced to file names so the record
        does not depend on where the run happened."""
        return {
            "data": {"file": self.data_path.name, "format": self.data_format,
                     "annotations": self.annotations_path.name if self.annotations_path else None},
            "judges": [dataclasses.asdict(j) for j in self.judges],
            "active_judges": list(self.active_judges) if self.active_judges is not None else None,
            "filter": {"enabled": self.filter_enabled, "keep": sorted(self.filter_keep),
                       "judge": self.classifier().judge_id if self.judges else None},
            "scores": {"source": self.score_source},
            "predictor": dataclasses.asdict(self.train),
            "attribution": {"background_rows": self.background_rows, "full_background": self.full_background,
                            "method": self.attribution_method, "seed": self.attribution_seed,
                            "payoff": "margin (log-odds)"},
            "elo": {**dataclasses.asdict(self.elo), "attributes": [a.value for a in self.elo_attributes],
                    "per_judge": self.per_judge_elo},
            "report": {"top_k": self.top_k},
        }


def _check_keys(section: str, table: Mapping, allowed: set[str]) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"[{section}]: unknown key(s) {sorted(unknown)}")


def _judge(entry: Mapping[str, Any], base: Path) -> tuple[JudgeConfig, PromptTemplate]:
    _check_keys("judges", entry, _JUDGE_KEYS)
    try:
        judge_id = str(entry["judge_id"])
        model = str(entry["model_name"])
    except KeyError as exc:
        raise ConfigError(f"[[judges]] entry is missing {exc.args[0]!r}") from None
    scale = float(entry.get("native_scale_max", 1.0))
    if "template_file" in entry:
        path = base / entry["template_file"]
        if not path.is_file():
            raise ConfigError(f"judge {judge_id}: template_file does not exist: {path}")
        try:
            template = PromptTemplate(path.stem, path.read_text(encoding="utf-8"), scale)
        except (ValueError, DataError) as exc:
            raise ConfigError(f"judge {judge_id}: {exc}") from None
    else:
        tid = entry.get("template", "olmo" if scale == 10.0 else "main")
        if tid not in BUILTIN_TEMPLATE_IDS:
            raise ConfigError(f"judge {judge_id}: unknown template {tid!r}; builtin: {BUILTIN_TEMPLATE_IDS}")
        template = builtin_template(tid)
    kwargs = {k: entry[k] for k in ("endpoint_url", "temperature", "max_retries", "timeout") if k in entry}
    try:
        config = JudgeConfig(judge_id, model, native_scale_max=scale, template_id=template.template_id, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"judge {judge_id}: {exc}") from None
    return config, template


def _dataclass_from(cls, section: str, table: Mapping, **overrides):
    try:
        return cls(**{**table, **overrides})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def load_run_config(path: str | Path | None, *, out: str | Path | None = None, seed: int | None = None,
                    judges: list[str] | None = None, attributes: list[str] | None = None,
                    offline: bool | None = None) -> RunConfig:
    """Read a TOML run file; keyword arguments are command-line overrides.

    Relative paths in the file resolve against the file's directory.
    """
    if path is None:
        raise ConfigError("a run configuration file is required (--config)")
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    base = path.parent

    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
    for name, allowed in _SECTIONS.items():
        if allowed is not None and name in raw:
            _check_keys(name, raw[name], allowed)

    data = raw.get("data", {})
    if "path" not in data:
        raise ConfigError("[data] path is required")
    run = raw.get("run", {})
    seed = seed if seed is not None else run.get("seed")
    seeded = {"seed": seed} if seed is not None else {}

    panel = [_judge(entry, base) for entry in raw.get("judges", [])]
    filt = raw.get("filter", {})
    elo = dict(raw.get("elo", {}))
    elo_attrs = elo.pop("attributes", None)
    per_judge = bool(elo.pop("per_judge", False))
    if attributes:
        elo_attrs = attributes
    try:
        parsed_attrs = tuple(AttributeName.parse(a) for a in elo_attrs) if elo_attrs else ATTRIBUTES
    except (ValueError, KeyError, DataError) as exc:
        raise ConfigError(f"unknown attribute: {exc}") from None
    parsed_attrs = tuple(a for a in ATTRIBUTES if a in parsed_attrs)
    attribution = raw.get("attribution", {})
    out_dir = Path(out) if out is not None else base / run.get("out", "out")

    config = RunConfig(
        data_path=base / data["path"],
        data_format=data.get("format", "arena_jsonl"),
        annotations_path=base / data["annotations"] if data.get("annotations") else None,
        judges=tuple(j for j, _ in panel),
        templates={j.judge_id: t for j, t in panel},
        filter_enabled=bool(filt.get("enabled", True)),
        filter_keep=frozenset(filt.get("keep", DEFAULT_KEEP)),
        filter_judge=filt.get("judge"),
        score_source=raw.get("scores", {}).get("source", "judges"),
        active_judges=tuple(judges) if judges else None,
        train=_dataclass_from(TrainConfig, "predictor", raw.get("predictor", {}), **seeded),
        background_rows=int(attribution.get("background_rows", 256)),
        full_background=bool(attribution.get("full_background", False)),
        attribution_method=attribution.get("method", "leaf"),
        attribution_seed=int(seed if seed is not None else attribution.get("seed", 0)),
        elo=_dataclass_from(EloConfig, "elo", elo, **seeded),
        elo_attributes=parsed_attrs,
        per_judge_elo=per_judge,
        top_k=int(raw.get("report", {}).get("top_k", 7)),
        out_dir=out_dir,
        cache_dir=base / run["cache"] if run.get("cache") else None,
        max_in_flight=int(run.get("max_in_flight", 8)),
        offline=bool(offline) if offline else bool(run.get("offline", False)),
    )
    return config.validate()


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    return replace(config, **changes).validate()
