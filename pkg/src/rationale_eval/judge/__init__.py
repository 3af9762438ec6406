from .client import JudgeClient, JudgeConfig, ResponseCache, call_judge, canonical_request, request_key
from .panel import PanelResult, dump_verdicts, load_verdicts, panel_cards, score_pair_with_panel, score_pairs
from .parsing import parse_verdict, strip_fences
from .prompts import PromptTemplate, builtin_template, example_output_block, render_prompt

__all__ = [
    "JudgeClient", "JudgeConfig", "ResponseCache", "call_judge", "canonical_request", "request_key",
    "PanelResult", "dump_verdicts", "load_verdicts", "panel_cards", "score_pair_with_panel", "score_pairs",
    "parse_verdict", "strip_fences",
    "PromptTemplate", "builtin_template", "example_output_block", "render_prompt",
]
