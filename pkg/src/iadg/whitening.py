"""Asymmetric instance adaptive whitening.

Covariance of the instance-normalized feature, a cross-branch variance matrix
locating the style-sensitive entries, hard top-k masks with per-class ratios
(real faces whitened harder than spoof), and the bilateral suppression loss.
"""

import numpy as np

from . import tensor as T
from .style import REAL, SPOOF

VARIANTS = ("off", "full_iw", "symmetric_iaw", "asymmetric_iaw")


def covariance(feat, eps=1e-5):
    """Per-sample C x C covariance of the IN-normalized feature.

    Input is the raw (N,C,H,W) feature Tensor; instance normalization is
    applied internally.  Returns a list of N covariance Tensors on the tape.
    """
    n, c, h, w = feat.shape
    hw = h * w
    normed = T.instance_norm(feat, eps)
    out = []
    for i in range(n):
        rows = T.reshape(T.narrow(normed, 0, i, 1), (c, hw))
        out.append(T.matmul(rows, T.transpose2d(rows)) * T.Tensor(1.0 / hw))
    return out


def variance_matrix(pairs):
    """Elementwise variance of (cov_org, cov_aug) pairs, averaged over pairs.

    Operates on plain arrays; the mask selection is not differentiated.
    """
    if not pairs:
        raise ValueError("variance_matrix needs at least one pair")
    acc = None
    for s_org, s_aug in pairs:
        a = s_org.data if isinstance(s_org, T.Tensor) else np.asarray(s_org)
        b = s_aug.data if isinstance(s_aug, T.Tensor) else np.asarray(s_aug)
        m = 0.5 * (a + b)
        var = 0.5 * ((a - m) ** 2 + (b - m) ** 2)
        acc = var if acc is None else acc + var
    return acc / len(pairs)


def selective_mask(v, ratio):
    """Binary strictly-upper-triangular mask of the floor(U * ratio) largest
    entries of V, U = C(C-1)/2.  Ties break by (row, col) lexicographic order.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"selective ratio must be in [0,1], got {ratio}")
    c = v.shape[0]
    rows, cols = np.triu_indices(c, k=1)
    total = rows.size
    count = int(np.floor(total * ratio))
    mask = np.zeros((c, c))
    if count == 0:
        return mask
    vals = v[rows, cols]
    # sort by value descending, then row, then col
    order = np.lexsort((cols, rows, -vals))
    keep = order[:count]
    mask[rows[keep], cols[keep]] = 1.0
    return mask


def masked_mean_abs(cov, mask):
    """Mean absolute covariance over the selected entries (tape op)."""
    count = float(mask.sum())
    if count == 0:
        return None
    return T.tsum(T.absval(cov * T.Tensor(mask))) * T.Tensor(1.0 / count)


def aiaw_loss(cov_org, cov_aug, labels, k_r, k_s, variant="asymmetric_iaw"):
    """Bilateral whitening loss over a batch of covariance pairs.

    Per class: a variance matrix over that subgroup picks the mask, then both
    branches' masked mean-absolute covariances are averaged over the subgroup.
    Empty subgroups and empty masks contribute zero.
    """
    if variant not in VARIANTS or variant == "off":
        raise ValueError(f"unknown whitening variant {variant!r}")
    if k_r < k_s:
        raise ValueError(f"k_r ({k_r}) must be >= k_s ({k_s})")
    labels = np.asarray(labels)
    c = cov_org[0].shape[0]
    ratios = {REAL: k_r, SPOOF: k_s}

    loss = T.Tensor(0.0)
    for cls in (REAL, SPOOF):
        idx = np.flatnonzero(labels == cls)
        if idx.size == 0:
            continue
        if variant == "full_iw":
            mask = np.triu(np.ones((c, c)), k=1)
        else:
            ratio = ratios[cls] if variant == "asymmetric_iaw" else k_r
            v = variance_matrix([(cov_org[i], cov_aug[i]) for i in idx])
            mask = selective_mask(v, ratio)
        if mask.sum() == 0:
            continue
        for covs in (cov_org, cov_aug):
            acc = None
            for i in idx:
                term = masked_mean_abs(covs[i], mask)
                acc = term if acc is None else acc + term
            loss = loss + acc * T.Tensor(1.0 / idx.size)
    return loss


def variance_by_class(cov_org, cov_aug, labels):
    """Per-class cross-branch variance matrices for one batch (plain arrays)."""
    labels = np.asarray(labels)
    out = {}
    for cls in (REAL, SPOOF):
        idx = np.flatnonzero(labels == cls)
        if idx.size:
            out[cls] = variance_matrix([(cov_org[i], cov_aug[i]) for i in idx])
    return out


def masks_from_variance(vmats, k_r, k_s, variant="asymmetric_iaw"):
    """Selective masks from (possibly epoch-aggregated) variance matrices."""
    ratios = {REAL: k_r, SPOOF: k_s}
    masks = {}
    for cls, v in vmats.items():
        if variant == "full_iw":
            c = v.shape[0]
            masks[cls] = np.triu(np.ones((c, c)), k=1)
        else:
            ratio = ratios[cls] if variant == "asymmetric_iaw" else k_r
            masks[cls] = selective_mask(v, ratio)
    return masks


def make_masks(cov_org, cov_aug, labels, k_r, k_s, variant="asymmetric_iaw"):
    """Per-class masks as used by aiaw_loss (for logging / diagnostics)."""
    labels = np.asarray(labels)
    c = cov_org[0].shape[0]
    ratios = {REAL: k_r, SPOOF: k_s}
    masks = {}
    for cls in (REAL, SPOOF):
        idx = np.flatnonzero(labels == cls)
        if idx.size == 0:
            continue
        if variant == "full_iw":
            masks[cls] = np.triu(np.ones((c, c)), k=1)
        else:
            ratio = ratios[cls] if variant == "asymmetric_iaw" else k_r
            v = variance_matrix([(cov_org[i], cov_aug[i]) for i in idx])
            masks[cls] = selective_mask(v, ratio)
    return masks
