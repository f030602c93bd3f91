"""Metric functions against exhaustive brute-force oracles."""

import numpy as np
import pytest

from iadg import metrics
from iadg.metrics import SingleClassError
from iadg.tensor import Rng

REAL, SPOOF = 1, 0


def brute_auc(scores, labels):
    """Pairwise counting oracle."""
    real = scores[labels == REAL]
    spoof = scores[labels == SPOOF]
    wins = 0.0
    for r in real:
        for s in spoof:
            if r > s:
                wins += 1.0
            elif r == s:
                wins += 0.5
    return wins / (len(real) * len(spoof))


def brute_eer(scores, labels):
    """Exhaustive threshold-sweep oracle."""
    real = scores[labels == REAL]
    spoof = scores[labels == SPOOF]
    best = None
    for t in sorted(set(scores)):
        frr = np.mean(real < t)
        far = np.mean(spoof >= t)
        gap = abs(far - frr)
        if best is None or gap < best[0]:
            best = (gap, t, 0.5 * (far + frr))
    return best[2], best[1]


def test_perfect_separation():
    s = np.array([0.9, 0.8, 0.1, 0.2])
    y = np.array([1, 1, 0, 0])
    assert metrics.auc(s, y) == 1.0
    eer, thr, hter = metrics.eer_hter(s, y)
    assert eer == 0.0 and hter == 0.0


def test_all_ties_gives_half():
    s = np.full(6, 0.5)
    y = np.array([1, 1, 1, 0, 0, 0])
    assert metrics.auc(s, y) == 0.5


def test_handworked_auc():
    s = np.array([0.9, 0.4, 0.6, 0.1])
    y = np.array([1, 1, 0, 0])
    assert metrics.auc(s, y) == 0.75  # 3 of 4 pairs ordered correctly


def test_handworked_hter():
    s = np.array([0.9, 0.4, 0.6, 0.1])
    y = np.array([1, 1, 0, 0])
    eer, thr, hter = metrics.eer_hter(s, y)
    assert hter == 0.5 and thr == 0.6


def test_oracles_on_100_random_sets():
    for trial in range(100):
        rng = Rng(500, trial)
        n = int(rng.integers(4, 21))
        scores = np.round(rng.uniform(0, 1, n), 2)  # rounding forces ties
        labels = np.zeros(n, dtype=int)
        labels[: max(1, n // 3)] = 1
        labels = labels[rng.permutation(n)]
        assert metrics.auc(scores, labels) == brute_auc(scores, labels)
        eer, thr, hter = metrics.eer_hter(scores, labels)
        o_eer, o_thr = brute_eer(scores, labels)
        assert abs(eer - o_eer) < 1e-12
        assert abs(thr - o_thr) < 1e-12
        assert hter == eer


def test_auc_monotone_invariance():
    rng = Rng(501)
    scores = rng.uniform(0, 1, 30)
    labels = (rng.uniform(0, 1, 30) > 0.5).astype(int)
    labels[0], labels[1] = 1, 0
    base = metrics.auc(scores, labels)
    for f in (lambda s: 3 * s + 2, np.exp, lambda s: s ** 3):
        assert metrics.auc(f(scores), labels) == base


def test_label_swap_symmetry():
    rng = Rng(502)
    scores = rng.uniform(0, 1, 20)
    labels = np.array([1] * 10 + [0] * 10)
    _, _, h1 = metrics.eer_hter(scores, labels)
    _, _, h2 = metrics.eer_hter(1.0 - scores, 1 - labels)
    assert abs(h1 - h2) < 1e-12


def test_single_class_rejected():
    with pytest.raises(SingleClassError):
        metrics.auc(np.array([0.5, 0.6]), np.array([1, 1]))
    with pytest.raises(SingleClassError):
        metrics.eer_hter(np.array([0.5, 0.6]), np.array([0, 0]))


def test_roc_endpoints():
    rng = Rng(503)
    scores = rng.uniform(0, 1, 25)
    labels = np.array([1] * 12 + [0] * 13)
    fpr, tpr = metrics.roc_points(scores, labels)
    assert fpr[0] == 0.0 and tpr[0] == 0.0
    assert fpr[-1] == 1.0 and tpr[-1] == 1.0
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
