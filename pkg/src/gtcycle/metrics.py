"""Evaluation metrics for generated text and extracted graphs.

All metrics are implemented from their definitions so scores are
reproducible without external scorers:

* corpus BLEU-4 with modified n-gram precision and closest-reference
  brevity penalty, no smoothing;
* TER with greedy block shifts over word tokens;
* chrF++ (character 1..6-grams plus word 1..2-grams, beta = 2);
* strict triple match (set-based micro precision/recall/F1).

Text is tokenized by whitespace throughout; chrF++ character n-grams are
taken over the text with all whitespace removed.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

from .graph_codec import KnowledgeGraph

_MAX_SHIFT_SPAN = 10
_MAX_SHIFT_DISTANCE = 50


class MetricError(ValueError):
    """Raised for empty or misaligned evaluation inputs."""


def _check_aligned(hypotheses: list, references: list) -> None:
    if not hypotheses:
        raise MetricError("no segments to score")
    if len(hypotheses) != len(references):
        raise MetricError(
            f"{len(hypotheses)} hypotheses vs {len(references)} reference groups"
        )


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# ----------------------------------------------------------------------
# BLEU


def corpus_bleu(hypotheses: list[str], references: list[list[str]]) -> float:
    """Corpus-level BLEU-4.

    Clipped n-gram counts are pooled over segments before taking the
    geometric mean; any order with zero matches sends the score to 0.
    The brevity penalty uses the reference closest in length to each
    hypothesis, breaking ties toward the shorter reference.
    """
    _check_aligned(hypotheses, references)
    matched = [0] * 4
    total = [0] * 4
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise MetricError("segment with no references")
        hyp_tokens = hyp.split()
        ref_token_lists = [r.split() for r in refs]
        hyp_len += len(hyp_tokens)
        ref_len += min(
            (len(r) for r in ref_token_lists),
            key=lambda n: (abs(n - len(hyp_tokens)), n),
        )
        for n in range(1, 5):
            hyp_counts = _ngrams(hyp_tokens, n)
            if not hyp_counts:
                continue
            clip: Counter = Counter()
            for ref_tokens in ref_token_lists:
                for gram, count in _ngrams(ref_tokens, n).items():
                    clip[gram] = max(clip[gram], count)
            matched[n - 1] += sum(min(c, clip[g]) for g, c in hyp_counts.items())
            total[n - 1] += sum(hyp_counts.values())
    if hyp_len == 0:
        return 0.0
    if any(t == 0 or m == 0 for m, t in zip(matched, total)):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matched, total)) / 4.0
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return brevity * math.exp(log_precision)


# ----------------------------------------------------------------------
# TER


def _levenshtein(a: list[str], b: list[str]) -> int:
    if not a:
        return len(b)
    previous = list(range(len(b) + 1))
    for i, token in enumerate(a, start=1):
        current = [i]
        for j, other in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (token != other),
                )
            )
        previous = current
    return previous[-1]

def _ter_edits(hyp: list[str], ref: list[str]) -> int:
    """Edits to turn hyp into ref: greedy block shifts, then Levenshtein.

    Each shift moves a contiguous block that occurs verbatim in the
    reference (span <= 10, displacement <= 50) and costs one edit; the
    shift taken at each round is the one that most reduces the remaining
    word edit distance, repeated while some shift strictly reduces it.
    """
    ref_phrases = set()
    for i in range(len(ref)):
        for length in range(1, min(_MAX_SHIFT_SPAN, len(ref) - i) + 1):
            ref_phrases.add(tuple(ref[i : i + length]))
    current = list(hyp)
    distance = _levenshtein(current, ref)
    shifts = 0
    while distance > 0:
        best_gain = 0
        best_state: list[str] | None = None
        best_distance = distance
        for i in range(len(current)):
            for length in range(1, min(_MAX_SHIFT_SPAN, len(current) - i) + 1):
                block = tuple(current[i : i + length])
                if block not in ref_phrases:
                    continue
                rest = current[:i] + current[i + length :]
                for j in range(len(rest) + 1):
                    if j == i or abs(i - j) > _MAX_SHIFT_DISTANCE:
                        continue
                    candidate = rest[:j] + list(block) + rest[j:]
                    gain = distance - _levenshtein(candidate, ref)
                    if gain > best_gain:
                        best_gain = gain
                        best_state = candidate
                        best_distance = distance - gain
        if best_state is None:
            break
        current = best_state
        distance = best_distance
        shifts += 1
    return shifts + distance


def corpus_ter(hypotheses: list[str], references: list[list[str]]) -> float:
    """Corpus TER: total best-reference edits over total average reference length."""
    _check_aligned(hypotheses, references)
    total_edits = 0
    total_length = 0.0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise MetricError("segment with no references")
        hyp_tokens = hyp.split()
        ref_token_lists = [r.split() for r in refs]
        total_edits += min(_ter_edits(hyp_tokens, r) for r in ref_token_lists)
        total_length += sum(len(r) for r in ref_token_lists) / len(ref_token_lists)
    if total_length == 0:
        raise MetricError("references contain no words")
    return total_edits / total_length


# ----------------------------------------------------------------------
# chrF++


def _chrf_counts(hyp: str, ref: str) -> tuple[list[float], list[float]]:
    """Per-order precisions and recalls; orders empty on both sides are dropped."""
    hyp_chars = "".join(hyp.split())
    ref_chars = "".join(ref.split())
    hyp_words = hyp.split()
    ref_words = ref.split()
    precisions: list[float] = []
    recalls: list[float] = []

    def add(hyp_grams: Counter, ref_grams: Counter) -> None:
        if not hyp_grams and not ref_grams:
            return
        overlap = sum(min(c, ref_grams[g]) for g, c in hyp_grams.items())
        precisions.append(overlap / sum(hyp_grams.values()) if hyp_grams else 0.0)
        recalls.append(overlap / sum(ref_grams.values()) if ref_grams else 0.0)

    for n in range(1, 7):
        add(_ngrams(list(hyp_chars), n), _ngrams(list(ref_chars), n))
    for n in range(1, 3):
        add(_ngrams(hyp_words, n), _ngrams(ref_words, n))
    return precisions, recalls


def segment_chrf_pp(hyp: str, refs: list[str], beta: float = 2.0) -> float:
    """chrF++ of one segment: the best score over its references."""
    if not refs:
        raise MetricError("segment with no references")
    best = 0.0
    for ref in refs:
        precisions, recalls = _chrf_counts(hyp, ref)
        if not precisions:
            continue
        precision = sum(precisions) / len(precisions)
        recall = sum(recalls) / len(recalls)
        if precision + recall > 0:
            factor = beta * beta
            score = (
                (1 + factor) * precision * recall / (factor * precision + recall)
            )
        else:
            score = 0.0
        best = max(best, score)
    return best


def corpus_chrf_pp(hypotheses: list[str], references: list[list[str]]) -> float:
    _check_aligned(hypotheses, references)
    return sum(
        segment_chrf_pp(h, r) for h, r in zip(hypotheses, references)
    ) / len(hypotheses)


# ----------------------------------------------------------------------
# strict triple match


def _triple_key(triple, byte_exact: bool) -> tuple[str, str, str]:
    fields = (triple.subject, triple.predicate, triple.object)
    if byte_exact:
        return fields
    return tuple(" ".join(f.split()).casefold() for f in fields)


def strict_triple_match(
    predicted: list[KnowledgeGraph | None],
    references: list[KnowledgeGraph],
    byte_exact: bool = False,
) -> dict[str, float]:
    """Micro precision/recall/F1 over triple sets.

    A predicted graph of None (unrecoverable parse) contributes zero
    predicted triples but its references still count, so parse failures
    lower recall instead of vanishing from the score.
    """
    _check_aligned(list(predicted), list(references))
    n_matched = 0
    n_predicted = 0
    n_reference = 0
    n_failed = 0
    for pred, ref in zip(predicted, references):
        ref_set = {_triple_key(t, byte_exact) for t in ref.triples}
        n_reference += len(ref_set)
        if pred is None:
            n_failed += 1
            continue
        pred_set = {_triple_key(t, byte_exact) for t in pred.triples}
        n_predicted += len(pred_set)
        n_matched += len(pred_set & ref_set)
    precision = n_matched / n_predicted if n_predicted else 0.0
    recall = n_matched / n_reference if n_reference else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "n_matched": n_matched,
        "n_predicted": n_predicted,
        "n_reference": n_reference,
        "n_failed": n_failed,
    }


# ----------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class TextEvalReport:
    bleu: float
    ter: float
    chrf_pp: float
    n_segments: int
    per_split: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "ter": self.ter,
            "chrf_pp": self.chrf_pp,
            "n_segments": self.n_segments,
            "per_split": self.per_split,
        }


@dataclass(frozen=True)
class GraphEvalReport:
    precision: float
    recall: float
    f1: float
    n_matched: int
    n_predicted: int
    n_reference: int
    n_failed: int
    n_segments: int
    per_split: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "n_matched": self.n_matched,
            "n_predicted": self.n_predicted,
            "n_reference": self.n_reference,
            "n_failed": self.n_failed,
            "n_segments": self.n_segments,
            "per_split": self.per_split,
        }


def _split_indices(splits: list[str]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i, tag in enumerate(splits):
        groups.setdefault(tag, []).append(i)
    return groups


def evaluate_text(
    hypotheses: list[str],
    references: list[list[str]],
    splits: list[str] | None = None,
) -> TextEvalReport:
    _check_aligned(hypotheses, references)
    if splits is not None and len(splits) != len(hypotheses):
        raise MetricError("splits not aligned with segments")
    per_split = {}
    if splits is not None:
        for tag, idx in sorted(_split_indices(splits).items()):
            hyp = [hypotheses[i] for i in idx]
            ref = [references[i] for i in idx]
            per_split[tag] = {
                "bleu": corpus_bleu(hyp, ref),
                "ter": corpus_ter(hyp, ref),
                "chrf_pp": corpus_chrf_pp(hyp, ref),
                "n_segments": len(idx),
            }
    return TextEvalReport(
        bleu=corpus_bleu(hypotheses, references),
        ter=corpus_ter(hypotheses, references),
        chrf_pp=corpus_chrf_pp(hypotheses, references),
        n_segments=len(hypotheses),
        per_split=per_split,
    )


def evaluate_graphs(
    predicted: list[KnowledgeGraph | None],
    references: list[KnowledgeGraph],
    splits: list[str] | None = None,
    byte_exact: bool = False,
) -> GraphEvalReport:
    stats = strict_triple_match(predicted, references, byte_exact=byte_exact)
    if splits is not None and len(splits) != len(predicted):
        raise MetricError("splits not aligned with segments")
    per_split = {}
    if splits is not None:
        for tag, idx in sorted(_split_indices(splits).items()):
            sub = strict_triple_match(
                [predicted[i] for i in idx],
                [references[i] for i in idx],
                byte_exact=byte_exact,
            )
            sub["n_segments"] = len(idx)
            per_split[tag] = sub
    return GraphEvalReport(
        precision=stats["precision"],
        recall=stats["recall"],
        f1=stats["f1"],
        n_matched=stats["n_matched"],
        n_predicted=stats["n_predicted"],
        n_reference=stats["n_reference"],
        n_failed=stats["n_failed"],
        n_segments=len(predicted),
        per_split=per_split,
    )


def format_report(report: TextEvalReport | GraphEvalReport) -> str:
    """Plain-text rendering of a report, one metric per line."""
    lines = []
    if isinstance(report, TextEvalReport):
        lines.append(f"segments: {report.n_segments}")
        lines.append(f"BLEU:     {report.bleu:.4f}")
        lines.append(f"TER:      {report.ter:.4f}")
        lines.append(f"chrF++:   {report.chrf_pp:.4f}")
        for tag, row in report.per_split.items():
            lines.append(
                f"  [{tag}] n={row['n_segments']} BLEU={row['bleu']:.4f} "
                f"TER={row['ter']:.4f} chrF++={row['chrf_pp']:.4f}"
            )
    else:
        lines.append(f"segments: {report.n_segments}")
        lines.append(f"precision: {report.precision:.4f}")
        lines.append(f"recall:    {report.recall:.4f}")
        lines.append(f"F1:        {report.f1:.4f}")
        lines.append(
            f"triples: matched={report.n_matched} predicted={report.n_predicted} "
            f"reference={report.n_reference} failed_parses={report.n_failed}"
        )
        for tag, row in report.per_split.items():
            lines.append(
                f"  [{tag}] n={row['n_segments']} P={row['precision']:.4f} "
                f"R={row['recall']:.4f} F1={row['f1']:.4f}"
            )
    return "\n".join(lines)


def report_to_json(report: TextEvalReport | GraphEvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)
