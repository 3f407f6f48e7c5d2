"""Ranking metrics: AUROC and AUPRC."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from ..errors import UndefinedMetricError


def auroc(scores, labels) -> float:
    """Area under the ROC curve via mid-ranks.

    Equals (concordant pairs + 0.5 * tied pairs) / (positives * negatives).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC needs both classes; got {n_pos} positives / {n_neg} negatives"
        )
    ranks = rankdata(scores, method="average")
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Step-interpolated area under the precision-recall curve.

    Thresholds sweep the distinct scores in descending order; ties enter
    together. The area is sum over thresholds of (delta recall) * precision,
    with no trapezoidal smoothing.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive label")

    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    tp = np.cumsum(sorted_labels == 1)
    fp = np.cumsum(sorted_labels == 0)
    # Keep only the last index of each tied score block.
    block_end = np.nonzero(np.diff(sorted_scores, append=np.nan) != 0)[0]
    tp = tp[block_end].astype(float)
    fp = fp[block_end].astype(float)

    precision = tp / (tp + fp)
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))
