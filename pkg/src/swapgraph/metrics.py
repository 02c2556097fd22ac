"""Evaluation metrics: ROC-AUC as a rank statistic, plain accuracy."""

from __future__ import annotations

import numpy as np


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative, ties
    counting one half.

    Computed from average ranks; each tie contributes exactly 0.5 to the pair
    count, so the result equals brute-force pair counting bit for bit (all
    intermediate numerators are multiples of 0.5, exactly representable).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(
            f"scores and labels must be equal-length vectors, got {scores.shape} and {labels.shape}"
        )
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"AUC undefined: need both classes, got {n_pos} positives / {n_neg} negatives"
        )
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty_like(scores)
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # average rank for the tie run [i, j], 1-based
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum_pos = ranks[labels == 1].sum()
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc(score_matrix, labels) -> tuple[dict[int, float], float]:
    """One-vs-rest AUC per class plus its unweighted mean.

    Classes absent from ``labels`` are skipped (AUC undefined there).
    """
    score_matrix = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(labels)
    per_class = {}
    for c in range(score_matrix.shape[1]):
        binary = (labels == c).astype(int)
        if binary.min() == binary.max():
            continue
        per_class[c] = roc_auc(score_matrix[:, c], binary)
    if not per_class:
        raise ValueError("AUC undefined for every class")
    return per_class, float(np.mean(list(per_class.values())))


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(
            f"predictions and labels differ in shape: {predictions.shape} vs {labels.shape}"
        )
    if predictions.size == 0:
        raise ValueError("accuracy undefined on empty input")
    return float((predictions == labels).mean())
