"""Exception hierarchy. Each family carries the CLI exit code it maps to."""

from __future__ import annotations


class RationaleEvalError(Exception):
    exit_code = 5


class ConfigError(RationaleEvalError):
    exit_code = 2


class DataError(RationaleEvalError):
    exit_code = 3


class MissingStageError(DataError):
    """A pipeline stage was run before the stage that produces its inputs."""

    def __init__(self, stage: str, required: str, path: str):
        super().__init__(f"stage '{stage}' needs output of stage '{required}' (missing {path}); "
                         f"run `rationale-eval {required}` first")
        self.stage = stage
        self.required = required


class ScoreRangeError(DataError):
    def __init__(self, raw: float, native_max: float, judge_id: str | None = None,
                 attribute: str | None = None):
        where = ", ".join(f"{k}={v}" for k, v in (("judge", judge_id), ("attribute", attribute)) if v)
        super().__init__(f"score {raw!r} outside [0, {native_max}]" + (f" ({where})" if where else ""))
        self.raw = raw
        self.native_max = native_max
        self.judge_id = judge_id
        self.attribute = attribute


class IncompleteCardError(DataError):
    def __init__(self, missing, context: str = ""):
        names = [getattr(m, "value", m) for m in missing]
        super().__init__(f"incomplete score card{context}: missing {', '.join(names)}")
        self.missing = tuple(missing)


class VerdictError(DataError):
    """Judge output that could not be turned into a verdict."""


class VerdictParseError(VerdictError):
    def __init__(self, message: str, raw: str = ""):
        excerpt = raw[:200].replace("\n", "\\n")
        super().__init__(f"{message}; raw excerpt: {excerpt!r}" if raw else message)
        self.raw_excerpt = excerpt


class IncompleteVerdictError(VerdictError):
    def __init__(self, missing):
        names = [getattr(m, "value", m) for m in missing]
        super().__init__(f"verdict missing attributes: {', '.join(names)}")
        self.missing = tuple(missing)


class VerdictRangeError(VerdictError):
    def __init__(self, cause: ScoreRangeError):
        super().__init__(str(cause))
        self.cause = cause


class JudgeEndpointError(RationaleEvalError):
    exit_code = 4

    def __init__(self, message: str, status: int | None = None, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body


class TransportError(JudgeEndpointError):
    """Retries exhausted."""


class OfflineCacheMiss(TransportError):
    """A request had no cached reply while network use was forbidden.

    Unlike other endpoint failures this aborts the stage instead of being recorded
    per pair: an offline replay must either reproduce the run or fail loudly.
    """


class CacheConflictError(RationaleEvalError):
    """A write-once cache entry was rewritten with different bytes."""


class InvariantError(RationaleEvalError):
    exit_code = 5
