import hashlib
import json
import pickle

import pytest

from conftest import FIXTURES, make_pair
from rationale_eval.core import Verdict
from rationale_eval.errors import DataError, JudgeEndpointError, OfflineCacheMiss
from rationale_eval.ingest import (FILTER_PROMPT, RawConversationPair, dump_decisions, dump_pairs,
                                   extract_rationale, filter_reasoning_pairs, load_annotations, load_decisions,
                                   load_pairs, parse_category, summarize_decisions)
from rationale_eval.judge.mock import keyword_category

ARENA = FIXTURES / "arena_mini.jsonl"
MTBENCH = FIXTURES / "mtbench_mini.jsonl"


def raw_pair(conv_a, conv_b=None, winner="model_a"):
    conv_b = conv_b if conv_b is not None else conv_a
    return RawConversationPair.from_json({
        "question_id": "q1", "model_a": "x", "model_b": "y", "winner": winner,
        "conversation_a": conv_a, "conversation_b": conv_b})


def turn(role, content):
    return {"role": role, "content": content}


def keyword_classifier(prompt: str) -> str:
    return keyword_category(prompt.split("Question:\n", 1)[1])


def test_load_arena_fixture():
    pairs = load_pairs(ARENA)
    assert len(pairs) == 20
    assert [p.pair_id for p in pairs] == [f"arena-{i:03d}" for i in range(20)]
    assert pairs[0].side_a.model_id == "gpt-4" and pairs[0].human_verdict is Verdict.A_WINS
    verdicts = [p.human_verdict for p in pairs]
    assert verdicts.count(Verdict.TIE) == 2 and verdicts.count(Verdict.TIE_BOTH_BAD) == 1


def test_load_mtbench_fixture_keeps_ids_unique():
    pairs = load_pairs(MTBENCH, "mtbench_jsonl")
    ids = [p.pair_id for p in pairs]
    assert len(ids) == 7 == len(set(ids))
    assert any(i.endswith("#1") for i in ids)
    assert {p.pair_id.split(":")[0] for p in pairs} == {"81", "82", "83"}


def test_empty_file_gives_empty_list(tmp_path):
    f = tmp_path / "empty.jsonl"
    f.write_text("")
    assert load_pairs(f) == []


def test_load_is_deterministic():
    digest = lambda: hashlib.sha256(pickle.dumps([p.to_dict() for p in load_pairs(ARENA)])).hexdigest()
    assert digest() == digest()


@pytest.mark.parametrize("fixture,fmt", [(ARENA, "arena_jsonl"), (MTBENCH, "mtbench_jsonl")])
def test_round_trip(tmp_path, fixture, fmt):
    pairs = load_pairs(fixture, fmt)
    out = tmp_path / "pairs.jsonl"
    dump_pairs(pairs, out)
    assert load_pairs(out, fmt) == pairs


def test_malformed_line_reports_line_number(tmp_path):
    lines = ARENA.read_text().splitlines()
    lines.insert(2, "{not json")
    f = tmp_path / "bad.jsonl"
    f.write_text("\n".join(lines))
    with pytest.raises(DataError, match=r":3:.*not json"):
        load_pairs(f)


def test_unknown_winner_rejected(tmp_path):
    rec = json.loads(ARENA.read_text().splitlines()[0])
    rec["winner"] = "model_c"
    f = tmp_path / "bad.jsonl"
    f.write_text(json.dumps(rec) + "\n")
    with pytest.raises(DataError, match="model_c"):
        load_pairs(f)


def test_unknown_format_rejected():
    with pytest.raises(DataError):
        load_pairs(ARENA, "csv")


def test_extract_single_turn():
    rec = extract_rationale(raw_pair([turn("user", "1+1?"), turn("assistant", "2.")]), "A")
    assert (rec.question_text, rec.rationale_text, rec.model_id, rec.turns) == ("1+1?", "2.", "x", 1)


def test_extract_two_turn_dialogue_concatenates_in_order():
    conv = [turn("user", "Q one"), turn("assistant", "R one"), turn("user", "Q two"), turn("assistant", "R two")]
    rec = extract_rationale(raw_pair(conv), "B")
    assert rec.question_text == "Q one" + "\n\n" + "Q two"
    assert rec.rationale_text == "R one" + "\n\n" + "R two"
    assert rec.turns == 2 and rec.model_id == "y"


def test_two_turn_fixture_record():
    pair = next(p for p in load_pairs(ARENA) if p.pair_id == "arena-005")
    assert pair.side_a.turns == 2
    assert pair.question.endswith("Now explain why the reverse implication does not hold.")


def test_extract_without_assistant_turn_fails():
    with pytest.raises(DataError):
        extract_rationale(raw_pair([turn("user", "hello")]), "A")


def test_roles_must_alternate():
    with pytest.raises(DataError):
        raw_pair([turn("assistant", "hi"), turn("user", "x")])


@pytest.mark.parametrize("question,keep,category", [
    ("Solve 2x + 3 = 11 step by step", True, "math"),
    ("Write a haiku about spring", False, "other"),
])
def test_filter_examples(question, keep, category):
    pair = make_pair("p", question=question)
    kept, decisions = filter_reasoning_pairs([pair], keyword_classifier)
    assert (decisions[0].keep, decisions[0].category) == (keep, category)
    assert kept == ([pair] if keep else [])


def test_filter_empty_input():
    assert filter_reasoning_pairs([], keyword_classifier) == ([], [])


def test_filter_prompt_carries_question():
    seen = []
    filter_reasoning_pairs([make_pair("p", question="What is {x}?")], lambda p: seen.append(p) or "math")
    assert seen[0] == FILTER_PROMPT.replace("{question}", "What is {x}?")


def test_filter_counts_are_exhaustive_and_order_preserved():
    pairs = load_pairs(ARENA)

    def flaky(prompt):
        if "haiku" in prompt.lower():
            raise JudgeEndpointError("down")
        if "bloops" in prompt:
            return "no idea"
        return keyword_classifier(prompt)

    kept, decisions = filter_reasoning_pairs(pairs, flaky, max_workers=3)
    assert [d.pair_id for d in decisions] == [p.pair_id for p in pairs]
    s = summarize_decisions(decisions)
    assert s.kept + s.dropped + s.undecided == len(pairs)
    assert s.undecided >= 1 and s.kept == len(kept)
    assert all(not d.keep for d in decisions if d.category == "undecided")


def test_filter_offline_miss_aborts():
    def offline(prompt):
        raise OfflineCacheMiss("miss")

    with pytest.raises(OfflineCacheMiss):
        filter_reasoning_pairs([make_pair("p")], offline)


def test_keep_set_is_configurable():
    pairs = [make_pair("a", question="Write a python function"), make_pair("b", question="Solve 3 * 4")]
    kept, _ = filter_reasoning_pairs(pairs, keyword_classifier, keep={"coding"})
    assert [p.pair_id for p in kept] == ["a"]


@pytest.mark.parametrize("reply,category", [("math", "math"), ("Logic.", "logic"), ("  OTHER\n", "other")])
def test_parse_category(reply, category):
    assert parse_category(reply) == category


def test_decisions_round_trip(tmp_path):
    _, decisions = filter_reasoning_pairs(load_pairs(ARENA), keyword_classifier)
    dump_decisions(decisions, tmp_path / "d.jsonl")
    assert load_decisions(tmp_path / "d.jsonl") == decisions


def test_annotations_normalized_and_grouped(tmp_path):
    scores = {"Faithfulness": 8, "Hallucination": 7, "Repetition": 9, "Informativeness": 6, "Plausibility": 8,
              "Self-Consistency": 9, "Source Consistency": 9, "Grammar": 10, "Arithmetic Accuracy": 10,
              "Conciseness": 5, "Coverage/Completeness": 7, "Correctness": 9}
    lines = [json.dumps({"pair_id": "p", "side": s, "annotator_id": f"h{i}", "scores": scores, "scale": 10})
             for s in "AB" for i in range(3)]
    f = tmp_path / "ann.jsonl"
    f.write_text("\n".join(lines))
    grouped = load_annotations(f)
    assert sorted(grouped) == [("p", "A"), ("p", "B")]
    assert len(grouped[("p", "A")]) == 3
    assert grouped[("p", "A")][0].card.to_dict()["Completeness"] == 0.7
