import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gtcycle.graph_codec import KnowledgeGraph, Triple
from gtcycle.metrics import (
    GraphEvalReport,
    MetricError,
    TextEvalReport,
    corpus_bleu,
    corpus_chrf_pp,
    corpus_ter,
    evaluate_graphs,
    evaluate_text,
    format_report,
    report_to_json,
    segment_chrf_pp,
    strict_triple_match,
)

EXACT = 1e-9


# ----------------------------------------------------------------------
# BLEU


def test_bleu_identical_corpus_is_one():
    hyp = ["the cat sat on the mat"]
    assert corpus_bleu(hyp, [[h] for h in hyp]) == pytest.approx(1.0, abs=EXACT)


def test_bleu_clipped_counts_hand_value():
    # p1..p4 = 4/5, 3/4, 2/3, 1/2 with the repeated "a" clipped to one
    value = corpus_bleu(["a a b c d"], [["a b c d"]])
    assert value == pytest.approx((1 / 5) ** 0.25, abs=EXACT)


def test_bleu_pools_counts_across_segments():
    # second segment contributes only to orders 1 and 2
    value = corpus_bleu(["a a b c d", "x y"], [["a b c d"], ["x y"]])
    assert value == pytest.approx((8 / 35) ** 0.25, abs=EXACT)


def test_bleu_clip_takes_max_over_references():
    # "a a" is licensed by the second reference, higher orders by the first
    value = corpus_bleu(["a a b c d"], [["a b c d", "a a x"]])
    assert value == pytest.approx((1 / 3) ** 0.25, abs=EXACT)


def test_bleu_brevity_penalty_hand_value():
    # all precisions 1, hypothesis 4 tokens vs closest reference 5
    value = corpus_bleu(["a b c d"], [["a b c d e"]])
    assert value == pytest.approx(math.exp(-0.25), abs=EXACT)


def test_bleu_length_tie_breaks_toward_shorter_reference():
    # |3-4| == |5-4|; the shorter reference wins, so no brevity penalty
    value = corpus_bleu(["a b c d"], [["a b c", "a b c d e"]])
    assert value == pytest.approx(1.0, abs=EXACT)


def test_bleu_zero_for_any_empty_order():
    assert corpus_bleu(["a b c d"], [["a x c y"]]) == 0.0
    assert corpus_bleu(["a b"], [["a b"]]) == 0.0  # no 3/4-grams anywhere
    assert corpus_bleu([""], [["a"]]) == 0.0


def test_bleu_alignment_errors():
    with pytest.raises(MetricError):
        corpus_bleu(["a"], [])
    with pytest.raises(MetricError):
        corpus_bleu(["a"], [[]])
    with pytest.raises(MetricError):
        corpus_bleu([], [])


# ----------------------------------------------------------------------
# TER


def test_ter_identical_is_zero():
    assert corpus_ter(["a b c d"], [["a b c d"]]) == pytest.approx(0.0, abs=EXACT)


def test_ter_single_substitution():
    value = corpus_ter(["a b c e"], [["a b c d"]])
    assert value == pytest.approx(0.25, abs=EXACT)


def test_ter_block_shift_costs_one_edit():
    # moving "c d" in front would take 4 substitutions; one shift fixes it
    value = corpus_ter(["c d a b"], [["a b c d"]])
    assert value == pytest.approx(0.25, abs=EXACT)


def test_ter_shift_beats_double_substitution():
    assert corpus_ter(["b a"], [["a b"]]) == pytest.approx(0.5, abs=EXACT)


def test_ter_takes_min_over_references():
    value = corpus_ter(["a b"], [["a b", "x y z"]])
    assert value == pytest.approx(0.0, abs=EXACT)


def test_ter_corpus_pooling_and_average_ref_length():
    # edits 1 + 1 over average lengths 4 + 2
    value = corpus_ter(["a b c e", "x"], [["a b c d"], ["x y"]])
    assert value == pytest.approx(1 / 3, abs=EXACT)


def test_ter_deletion_and_empty_hypothesis():
    assert corpus_ter(["a b b c"], [["a b c"]]) == pytest.approx(1 / 3, abs=EXACT)
    assert corpus_ter([""], [["a b"]]) == pytest.approx(1.0, abs=EXACT)


def test_ter_can_exceed_one():
    assert corpus_ter(["x y z w"], [["a"]]) == pytest.approx(4.0, abs=EXACT)


def test_ter_rejects_empty_reference_words():
    with pytest.raises(MetricError):
        corpus_ter([""], [[""]])


# ----------------------------------------------------------------------
# chrF++


def test_chrf_hand_value_cat_cab():
    # char orders 1-2 score 2/3 and 1/2, order 3 and words score 0,
    # orders 4-6 and word bigrams are absent on both sides
    assert segment_chrf_pp("cat", ["cab"]) == pytest.approx(7 / 24, abs=EXACT)


def test_chrf_identity_is_one():
    assert segment_chrf_pp("the cat", ["the cat"]) == pytest.approx(1.0, abs=EXACT)


def test_chrf_empty_hypothesis_is_zero():
    assert segment_chrf_pp("", ["ab"]) == pytest.approx(0.0, abs=EXACT)


def test_chrf_asymmetric_precision_recall():
    # precisions (1/2, 0, 0), recalls (1, 0, 0), beta=2 favors recall
    assert segment_chrf_pp("aa", ["a"]) == pytest.approx(5 / 18, abs=EXACT)


def test_chrf_takes_best_reference():
    assert segment_chrf_pp("cat", ["dog", "cat"]) == pytest.approx(1.0, abs=EXACT)


def test_chrf_corpus_is_segment_mean():
    value = corpus_chrf_pp(["the cat", "cat"], [["the cat"], ["cab"]])
    assert value == pytest.approx((1.0 + 7 / 24) / 2, abs=EXACT)


def test_chrf_requires_references():
    with pytest.raises(MetricError):
        segment_chrf_pp("a", [])


# ----------------------------------------------------------------------
# strict triple match


def graph(*items: tuple[str, str, str]) -> KnowledgeGraph:
    return KnowledgeGraph(tuple(Triple(*item) for item in items))


def test_strict_match_half_overlap():
    pred = [graph(("a", "p", "b"), ("a", "p", "c"))]
    ref = [graph(("a", "p", "b"), ("a", "p", "d"))]
    stats = strict_triple_match(pred, ref)
    assert stats["precision"] == pytest.approx(0.5, abs=EXACT)
    assert stats["recall"] == pytest.approx(0.5, abs=EXACT)
    assert stats["f1"] == pytest.approx(0.5, abs=EXACT)
    assert stats["n_matched"] == 1
    assert stats["n_failed"] == 0


def test_strict_match_failed_parse_counts_references():
    stats = strict_triple_match([None], [graph(("a", "p", "b"), ("c", "p", "d"))])
    assert stats["n_failed"] == 1
    assert stats["n_predicted"] == 0
    assert stats["n_reference"] == 2
    assert stats["precision"] == 0.0
    assert stats["recall"] == 0.0
    assert stats["f1"] == 0.0


def test_strict_match_normalizes_case_and_whitespace():
    pred = [graph(("Alice  B", "Has  Part", "C"))]
    ref = [graph(("alice b", "has part", "c"))]
    assert strict_triple_match(pred, ref)["f1"] == pytest.approx(1.0, abs=EXACT)
    assert strict_triple_match(pred, ref, byte_exact=True)["f1"] == 0.0


def test_strict_match_set_semantics_dedupe():
    pred = [graph(("a", "p", "b"), ("a", "p", "b"))]
    ref = [graph(("a", "p", "b"))]
    stats = strict_triple_match(pred, ref)
    assert stats["n_predicted"] == 1
    assert stats["f1"] == pytest.approx(1.0, abs=EXACT)


def test_strict_match_alignment_error():
    with pytest.raises(MetricError):
        strict_triple_match([None], [])


# ----------------------------------------------------------------------
# reports


def test_evaluate_text_with_splits():
    hyps = ["a b c d", "x y", "a b c d"]
    refs = [["a b c d"], ["x y"], ["a b c e"]]
    tags = ["seen", "unseen_entities", "seen"]
    report = evaluate_text(hyps, refs, splits=tags)
    assert isinstance(report, TextEvalReport)
    assert report.n_segments == 3
    assert set(report.per_split) == {"seen", "unseen_entities"}
    assert report.per_split["seen"]["n_segments"] == 2
    assert report.per_split["unseen_entities"]["bleu"] == 0.0  # too short for 4-grams
    assert report.per_split["unseen_entities"]["ter"] == pytest.approx(0.0, abs=EXACT)
    whole = evaluate_text(hyps, refs)
    assert whole.per_split == {}
    assert whole.bleu == report.bleu


def test_evaluate_graphs_with_splits():
    pred = [graph(("a", "p", "b")), None]
    ref = [graph(("a", "p", "b")), graph(("c", "p", "d"))]
    report = evaluate_graphs(pred, ref, splits=["seen", "seen"])
    assert isinstance(report, GraphEvalReport)
    assert report.n_failed == 1
    assert report.precision == pytest.approx(1.0, abs=EXACT)
    assert report.recall == pytest.approx(0.5, abs=EXACT)
    assert report.per_split["seen"]["n_segments"] == 2


def test_evaluate_split_alignment_errors():
    with pytest.raises(MetricError):
        evaluate_text(["a"], [["a"]], splits=["seen", "seen"])
    with pytest.raises(MetricError):
        evaluate_graphs([None], [graph(("a", "p", "b"))], splits=[])


def test_format_report_text_and_graph():
    text_report = evaluate_text(["a b c d"], [["a b c d"]], splits=["seen"])
    rendered = format_report(text_report)
    assert "BLEU:" in rendered and "TER:" in rendered and "chrF++:" in rendered
    assert "[seen]" in rendered
    graph_report = evaluate_graphs([None], [graph(("a", "p", "b"))])
    rendered = format_report(graph_report)
    assert "failed_parses=1" in rendered
    assert "F1:" in rendered


def test_report_json_round_trip():
    report = evaluate_text(["a b c d"], [["a b c d"]], splits=["seen"])
    payload = json.loads(report_to_json(report))
    assert payload["bleu"] == report.bleu
    assert payload["per_split"]["seen"]["n_segments"] == 1
    graph_payload = json.loads(
        report_to_json(evaluate_graphs([None], [graph(("a", "p", "b"))]))
    )
    assert graph_payload["n_failed"] == 1


# ----------------------------------------------------------------------
# properties

token = st.text(alphabet="abcxyz", min_size=1, max_size=3)
sentence = st.lists(token, min_size=1, max_size=8).map(" ".join)


@given(st.lists(sentence, min_size=1, max_size=4))
def test_identity_scores(sentences):
    refs = [[s] for s in sentences]
    assert corpus_ter(sentences, refs) == pytest.approx(0.0, abs=EXACT)
    assert corpus_chrf_pp(sentences, refs) == pytest.approx(1.0, abs=EXACT)
    bleu = corpus_bleu(sentences, refs)
    assert bleu in (0.0, pytest.approx(1.0, abs=EXACT))  # 0 when no 4-grams exist


@given(
    st.lists(sentence, min_size=1, max_size=4),
    st.lists(sentence, min_size=1, max_size=4),
)
def test_score_ranges(hyps, refs):
    n = min(len(hyps), len(refs))
    hyps, ref_lists = hyps[:n], [[r] for r in refs[:n]]
    assert 0.0 <= corpus_bleu(hyps, ref_lists) <= 1.0 + EXACT
    assert 0.0 <= corpus_chrf_pp(hyps, ref_lists) <= 1.0 + EXACT
    assert corpus_ter(hyps, ref_lists) >= 0.0
