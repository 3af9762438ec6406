import pytest

from rationale_eval.core import ATTRIBUTE_LABELS
from rationale_eval.errors import ConfigError
from rationale_eval.judge.prompts import PromptTemplate, builtin_template, example_output_block, render_prompt

SIMPLE = PromptTemplate("t", "Q: {question}\nR: {rationale}\n", 1.0)


def test_render_substitutes_verbatim():
    out = render_prompt(SIMPLE, "1+1?", "2.")
    assert out == "Q: 1+1?\nR: 2.\n"


def test_braces_in_rationale_are_literal():
    rationale = 'scores = {"a": 1} and {question} and {{rationale}}'
    out = render_prompt(SIMPLE, "what is {x}?", rationale)
    assert out == 'Q: what is {x}?\nR: ' + rationale + "\n"


@pytest.mark.parametrize("body", ["Q: {question}", "R: {rationale}", "{question}{question}{rationale}"])
def test_placeholders_must_appear_once(body):
    with pytest.raises(ConfigError):
        PromptTemplate("bad", body, 1.0)


@pytest.mark.parametrize("tid,scale", [("main", 1.0), ("olmo", 10.0)])
def test_builtin_templates(tid, scale):
    t = builtin_template(tid)
    assert t.scale_max == scale
    rendered = render_prompt(t, "QQQ", "RRR")
    assert "QQQ" in rendered and "RRR" in rendered
    assert rendered.replace("QQQ", "{question}", 1).replace("RRR", "{rationale}", 1) == t.body
    for label in ATTRIBUTE_LABELS:
        if label != "Completeness":
            assert label in t.body
    assert "Coverage/Completeness" in t.body


def test_unknown_builtin():
    with pytest.raises(ConfigError):
        builtin_template("gpt")


@pytest.mark.parametrize("tid,literals", [
    ("main", ('"Faithfulness": 0.95', '"Hallucination": 0.67', '"Repetition": 0.89')),
    ("olmo", ('"Faithfulness": 9.5', '"Hallucination": 6.8', '"Repetition": 8.9')),
])
def test_example_block_literals(tid, literals):
    block = example_output_block(builtin_template(tid))
    assert block.startswith("scores = {")
    for lit in literals:
        assert lit in block
