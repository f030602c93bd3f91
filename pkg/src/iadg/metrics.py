"""Evaluation metrics: AUC, EER and HTER over liveness scores."""

import numpy as np

from .style import REAL, SPOOF


class SingleClassError(ValueError):
    """Metrics need both real and spoof samples."""


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} vs labels {labels.shape}")
    if not ((labels == REAL).any() and (labels == SPOOF).any()):
        raise SingleClassError("both classes must be present")
    return scores, labels


def auc(scores, labels):
    """P(random real outscores random spoof), ties counted 0.5.

    Rank formulation (Mann-Whitney); equals the trapezoidal ROC area.
    """
    scores, labels = _check(scores, labels)
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    # average ranks over tie groups
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_real = int((labels == REAL).sum())
    n_spoof = len(scores) - n_real
    rank_sum = ranks[labels == REAL].sum()
    return float((rank_sum - n_real * (n_real + 1) / 2.0) / (n_real * n_spoof))


def eer_hter(scores, labels):
    """(EER, threshold, HTER) from a sweep over the observed scores.

    FRR(t) = fraction of real with score < t; FAR(t) = fraction of spoof with
    score >= t.  The threshold minimizing |FAR - FRR| is chosen (lowest on
    ties); EER = (FAR + FRR) / 2 there, and HTER on the same set equals it.
    """
    scores, labels = _check(scores, labels)
    real = np.sort(scores[labels == REAL])
    spoof = np.sort(scores[labels == SPOOF])
    thresholds = np.unique(scores)
    frr = np.searchsorted(real, thresholds, side="left") / real.size
    # count spoof >= t directly; 1 - k/n can differ from m/n by one ulp and
    # flip tie-breaks against an exact-counting oracle
    far = (spoof.size - np.searchsorted(spoof, thresholds, side="left")) / spoof.size
    best = int(np.argmin(np.abs(far - frr)))  # first min = lowest threshold
    eer = 0.5 * (far[best] + frr[best])
    return float(eer), float(thresholds[best]), float(eer)


def roc_points(scores, labels):
    """ROC curve as (fpr, tpr) arrays including the (0,0) and (1,1) endpoints."""
    scores, labels = _check(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    y = (labels[order] == REAL).astype(np.float64)
    tps = np.cumsum(y)
    fps = np.cumsum(1.0 - y)
    # collapse ties so the curve is a function of the threshold
    distinct = np.flatnonzero(np.diff(scores[order]) != 0)
    idx = np.concatenate([distinct, [len(y) - 1]])
    tpr = np.concatenate([[0.0], tps[idx] / tps[-1]])
    fpr = np.concatenate([[0.0], fps[idx] / fps[-1]])
    if fpr[-1] != 1.0 or tpr[-1] != 1.0:
        fpr = np.concatenate([fpr, [1.0]])
        tpr = np.concatenate([tpr, [1.0]])
    return fpr, tpr
