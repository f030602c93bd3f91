"""Classification and depth heads plus the supervised losses."""

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def init_heads(c, rng):
    """Heads over a final feature with `c` channels.

    cls: global average pool -> dense -> scalar logit.
    dep: two 3x3 convs down to a single-channel map at the feature resolution.
    """
    half = max(c // 2, 1)
    return {
        "cls_w": Tensor(rng.uniform(-1, 1, (c, 1)) / np.sqrt(c)),
        "cls_b": Tensor(np.zeros(1)),
        "dep1_w": Tensor(rng.uniform(-1, 1, (half, c, 3, 3)) / np.sqrt(c * 9)),
        "dep1_b": Tensor(np.zeros(half)),
        "dep2_w": Tensor(rng.uniform(-1, 1, (1, half, 3, 3)) / np.sqrt(half * 9)),
        "dep2_b": Tensor(np.zeros(1)),
    }


def cls_logits(final_feat, params):
    """(N,) liveness logits."""
    pooled = T.global_avg_pool(final_feat)
    return T.reshape(T.dense(pooled, params["cls_w"], params["cls_b"]), (final_feat.shape[0],))


def dep_map(final_feat, params):
    """(N, 1, D, D) predicted depth."""
    x = T.relu(T.conv2d(final_feat, params["dep1_w"], params["dep1_b"], 1, 1))
    return T.conv2d(x, params["dep2_w"], params["dep2_b"], 1, 1)


def _bce(logits, y):
    """Per-sample binary cross-entropy from logits, numerically stable."""
    yt = T.Tensor(y)
    return -(yt * T.logsigmoid(logits) + (T.Tensor(1.0) - yt) * T.logsigmoid(-logits))


def cls_loss(logits_org, y_cls, logits_aug=None):
    """BCE summed over branches, mean over the batch."""
    y = np.asarray(y_cls, dtype=np.float64)
    per = _bce(logits_org, y)
    if logits_aug is not None:
        per = per + _bce(logits_aug, y)
    return T.tmean(per)


def depth_loss(pred_org, y_dep, pred_aug=None):
    """Squared depth error summed over branches, mean over batch and pixels."""
    y = np.asarray(y_dep, dtype=np.float64)
    if y.ndim == 3:
        y = y[:, None]
    if pred_org.shape != y.shape:
        raise ShapeError(f"depth prediction {pred_org.shape} vs label {y.shape}")
    yt = T.Tensor(y)
    diff = pred_org - yt
    total = diff * diff
    if pred_aug is not None:
        diff_a = pred_aug - yt
        total = total + diff_a * diff_a
    return T.tmean(total)


def total_loss(cls_term, dep_term, aiaw_term, lam):
    """L_total = L_cls + lambda * L_dep + L_aiaw."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    out = cls_term + T.Tensor(lam) * dep_term
    if aiaw_term is not None:
        out = out + aiaw_term
    return out


def param_items(params, prefix="heads"):
    return [(f"{prefix}.{k}", t) for k, t in params.items()]
