"""Word error rate and membership-classification metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import UndefinedMetricError


@dataclass
class EditStats:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def edits(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.edits / self.ref_words


def wer(reference, hypothesis) -> EditStats:
    """Minimal unit-cost Levenshtein alignment of two word lists.

    The traceback is deterministic: on equal cost it prefers substitution
    over deletion over insertion, so the S/D/I split never depends on
    iteration order.
    """
    ref, hyp = list(reference), list(hypothesis)
    if not ref:
        raise ValueError("reference must be nonempty")

    rows, cols = len(ref) + 1, len(hyp) + 1
    dist = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        dist[i][0] = i
    for j in range(cols):
        dist[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            sub = dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            dele = dist[i - 1][j] + 1
            ins = dist[i][j - 1] + 1
            dist[i][j] = min(sub, dele, ins)

    s = d = ins_count = 0
    i, j = len(ref), len(hyp)
    while i > 0 or j > 0:
        cost = dist[i][j]
        if i > 0 and j > 0 and cost == dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost == dist[i - 1][j] + 1:
            d += 1
            i -= 1
        else:
            ins_count += 1
            j -= 1
    return EditStats(s, d, ins_count, len(ref))


def corpus_wer(pairs) -> float:
    """Edit-weighted corpus WER: total edits over total reference words."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("corpus_wer needs at least one pair")
    edits = 0
    words = 0
    for reference, hypothesis in pairs:
        stats = wer(reference, hypothesis)
        edits += stats.edits
        words += stats.ref_words
    return edits / words


def werr(wer_can: float, wer_ext: float) -> float:
    """Percent WER of the canary model relative to its extraneous twin."""
    if wer_ext <= 0:
        raise UndefinedMetricError("WERR is undefined for zero extraneous WER")
    return 100.0 * (wer_can - wer_ext) / wer_ext


def precision_recall(predictions, labels):
    """Precision and recall of member predictions against canary labels.

    `predictions` and `labels` are parallel booleans (True = predicted
    member / is canary). Precision is undefined when nothing is predicted
    positive.
    """
    predictions, labels = list(predictions), list(labels)
    if not predictions or len(predictions) != len(labels):
        raise ValueError("predictions and labels must be parallel and nonempty")
    if not any(labels):
        raise ValueError("at least one canary label is required")
    tp = sum(1 for p, l in zip(predictions, labels) if p and l)
    fp = sum(1 for p, l in zip(predictions, labels) if p and not l)
    fn = sum(1 for p, l in zip(predictions, labels) if not p and l)
    if tp + fp == 0:
        raise UndefinedMetricError("no positive predictions; precision undefined")
    return tp / (tp + fp), tp / (tp + fn)


def binomial_bound(n: int, sigmas: float = 3.0, p: float = 0.5) -> float:
    """Width of a +-sigmas binomial band around p for n trials."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return sigmas * math.sqrt(p * (1.0 - p) / n)
