"""Attachment scoring, per-arc-length curves, and multi-seed statistics.

LAS counts tokens whose head and label are both correct; UAS only the
head. Scores are micro-averaged over all tokens and punctuation is not
excluded. Arc length is |head - dependent| with root arcs kept in their
own bucket, outside the length curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Sequence, TextIO, Tuple

from .treebank import DepTree, Sentence

ROOT_BUCKET = "root"


class AlignmentError(ValueError):
    """Predicted trees do not line up with the gold sentences."""


@dataclass
class EvalReport:
    las: float
    uas: float
    total_tokens: int
    correct_heads: int
    correct_labeled: int
    recall: Dict[object, Tuple[float, int]] = field(default_factory=dict)
    precision: Dict[object, Tuple[float, int]] = field(default_factory=dict)


def _check_alignment(gold: Sequence[Sentence], predicted: Sequence[DepTree]) -> None:
    if len(gold) != len(predicted):
        raise AlignmentError(
            f"{len(gold)} gold sentences vs {len(predicted)} predicted trees")
    for i, (sent, tree) in enumerate(zip(gold, predicted)):
        if len(sent) != len(tree.heads):
            raise AlignmentError(
                f"sentence {i}: {len(sent)} tokens vs {len(tree.heads)} predicted heads")


def las(gold: Sequence[Sentence], predicted: Sequence[DepTree]) -> EvalReport:
    """Micro-averaged LAS/UAS over every token of every sentence."""
    _check_alignment(gold, predicted)
    total = heads_ok = labeled_ok = 0
    for sent, tree in zip(gold, predicted):
        labels = tree.labels or [None] * len(tree.heads)
        for tok, head, label in zip(sent.tokens, tree.heads, labels):
            total += 1
            if head == tok.gold_head:
                heads_ok += 1
                if label == tok.gold_label:
                    labeled_ok += 1
    if total == 0:
        return EvalReport(las=0.0, uas=0.0, total_tokens=0,
                          correct_heads=0, correct_labeled=0)
    return EvalReport(las=100.0 * labeled_ok / total, uas=100.0 * heads_ok / total,
                      total_tokens=total, correct_heads=heads_ok,
                      correct_labeled=labeled_ok)


def _length_bucket(head: int, dep: int, cap: int):
    if head == 0:
        return ROOT_BUCKET
    return min(abs(head - dep), cap)


def recall_by_length(gold: Sequence[Sentence], predicted: Sequence[DepTree],
                     cap: int = 15) -> EvalReport:
    """LAS/UAS plus labeled recall and precision curves by arc length.

    Recall at length l: correctly predicted fraction of gold arcs of
    length l. Precision at length l: correct fraction of predicted arcs
    of length l. Lengths >= cap are pooled into the cap bucket; buckets
    with no arcs are absent rather than zero.
    """
    report = las(gold, predicted)
    gold_count: Dict[object, int] = {}
    gold_hit: Dict[object, int] = {}
    pred_count: Dict[object, int] = {}
    pred_hit: Dict[object, int] = {}
    for sent, tree in zip(gold, predicted):
        labels = tree.labels or [None] * len(tree.heads)
        for tok, head, label in zip(sent.tokens, tree.heads, labels):
            correct = head == tok.gold_head and label == tok.gold_label
            g_bucket = _length_bucket(tok.gold_head, tok.index, cap)
            gold_count[g_bucket] = gold_count.get(g_bucket, 0) + 1
            gold_hit[g_bucket] = gold_hit.get(g_bucket, 0) + int(correct)
            p_bucket = _length_bucket(head, tok.index, cap)
            pred_count[p_bucket] = pred_count.get(p_bucket, 0) + 1
            pred_hit[p_bucket] = pred_hit.get(p_bucket, 0) + int(correct)
    def order(item):
        bucket = item[0]
        return (1, 0) if isinstance(bucket, str) else (0, bucket)

    report.recall = {b: (100.0 * gold_hit[b] / c, c)
                     for b, c in sorted(gold_count.items(), key=order)}
    report.precision = {b: (100.0 * pred_hit[b] / c, c)
                        for b, c in sorted(pred_count.items(), key=order)}
    return report


# ---- multi-seed statistics -------------------------------------------


def seed_stats(scores: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample (n-1) standard deviation; a single score gets stddev 0."""
    if not scores:
        raise ValueError("seed_stats needs at least one score")
    n = len(scores)
    mean = sum(scores) / n
    if n == 1:
        return mean, 0.0
    var = sum((s - mean) ** 2 for s in scores) / (n - 1)
    return mean, math.sqrt(var)


def _midranks(values: Sequence[float]) -> List[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def wilcoxon_rank_sum(sample_a: Sequence[float], sample_b: Sequence[float],
                      exact_limit: int = 12) -> float:
    """Two-sided rank-sum p-value.

    Exact by enumerating all rank assignments when the pooled size is at
    most exact_limit; otherwise a normal approximation with midrank tie
    correction and continuity correction. Two-sided tail = permutations
    whose rank sum deviates from its mean by at least the observed amount.
    """
    na, nb = len(sample_a), len(sample_b)
    if na < 2 or nb < 2:
        raise ValueError("wilcoxon_rank_sum needs at least two scores per sample")
    combined = list(sample_a) + list(sample_b)
    n = na + nb
    ranks = _midranks(combined)
    observed = sum(ranks[:na])
    mean = na * (n + 1) / 2.0
    deviation = abs(observed - mean)

    if n <= exact_limit:
        hits = 0
        count = 0
        for subset in combinations(range(n), na):
            count += 1
            w = sum(ranks[i] for i in subset)
            if abs(w - mean) >= deviation - 1e-12:
                hits += 1
        return hits / count

    tie_term = 0.0
    seen: Dict[float, int] = {}
    for v in combined:
        seen[v] = seen.get(v, 0) + 1
    for t in seen.values():
        tie_term += t ** 3 - t
    var = na * nb / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        return 1.0
    z = max(0.0, deviation - 0.5) / math.sqrt(var)
    p = 2.0 * (1.0 - 0.5 * (1.0 + math.erf(z / math.sqrt(2.0))))
    return min(1.0, p)


# ---- TSV output ------------------------------------------------------


def _fmt_bucket(bucket) -> str:
    return bucket if isinstance(bucket, str) else str(int(bucket))


def write_length_curve(sink: TextIO, model_name: str, report: EvalReport,
                       kind: str = "recall", header: bool = True) -> None:
    """One row per populated length bucket: model, arc_length, value, count.

    header=False appends rows for a further model to an open file.
    """
    curve = report.recall if kind == "recall" else report.precision
    count_name = "gold_count" if kind == "recall" else "pred_count"
    if header:
        sink.write(f"model\tarc_length\t{kind}\t{count_name}\n")
    for bucket, (value, count) in curve.items():
        sink.write(f"{model_name}\t{_fmt_bucket(bucket)}\t{value:.2f}\t{count}\n")


def write_score_table(sink: TextIO, rows: Sequence[Tuple[str, str, Sequence[float]]]) -> None:
    """Rows of (model, dataset, per-seed scores) as mean and stddev."""
    sink.write("model\ttreebank\tmean_las\tstddev\tseeds\n")
    for model_name, dataset, scores in rows:
        mean, std = seed_stats(list(scores))
        sink.write(f"{model_name}\t{dataset}\t{mean:.2f}\t{std:.2f}\t{len(scores)}\n")
