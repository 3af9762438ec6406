"""Attribute-level evaluation of model rationales.

Score rationales on twelve quality attributes with judge panels, explain human
preference labels with a boosted-tree predictor and exact Shapley values, and rank
models with per-attribute ELO tournaments.
"""

from .core import (ATTRIBUTE_LABELS, ATTRIBUTES, AttributeName, AttributeScoreCard, JudgeVerdict, PreferencePair,
                   RationaleRecord, Verdict, aggregate_panel, normalize_scale)
from .errors import (ConfigError, DataError, InvariantError, JudgeEndpointError, MissingStageError,
                     RationaleEvalError)

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTE_LABELS", "ATTRIBUTES", "AttributeName", "AttributeScoreCard", "JudgeVerdict", "PreferencePair",
    "RationaleRecord", "Verdict", "aggregate_panel", "normalize_scale",
    "ConfigError", "DataError", "InvariantError", "JudgeEndpointError", "MissingStageError", "RationaleEvalError",
]
