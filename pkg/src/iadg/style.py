"""Categorical style assembly.

Per-instance channel statistics are collected from the stage-1 features,
farthest point sampling picks L maximally dissimilar basis styles per class,
and novel styles are synthesized as Dirichlet-weighted convex combinations of
the basis, applied back onto content features AdaIN-style.  Real and spoof
banks never mix, so augmentation preserves the class label.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T

REAL, SPOOF = 1, 0


@dataclass
class StyleBank:
    real_mu: np.ndarray    # (L, C)
    real_sigma: np.ndarray
    spoof_mu: np.ndarray
    spoof_sigma: np.ndarray
    epoch_stamp: int

    def basis(self, cls):
        if cls == REAL:
            return self.real_mu, self.real_sigma
        return self.spoof_mu, self.spoof_sigma

    @property
    def size(self):
        return self.real_mu.shape[0]


def compute_style_stats(feat, eps=1e-5):
    """Per-instance channel mean and eps-stabilized std of an (N,C,H,W) array."""
    data = feat.data if isinstance(feat, T.Tensor) else np.asarray(feat)
    mu = data.mean(axis=(2, 3))
    sigma = np.sqrt(data.var(axis=(2, 3)) + eps)
    return mu, sigma


def fps_select(styles, num):
    """Greedy farthest point sampling over rows of `styles`.

    Seeded at the point farthest from the centroid; each next pick maximizes
    the min distance to the selected set.  Ties break toward the lowest index.
    Returns all indices when num >= len(styles).
    """
    pts = np.asarray(styles, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    m = pts.shape[0]
    if m == 0:
        raise ValueError("fps_select needs at least one style")
    if num >= m:
        return list(range(m))
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1)
    chosen = [int(np.argmax(d))]  # argmax takes the first max: lowest index on ties
    mind = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    while len(chosen) < num:
        mind[chosen] = -np.inf
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, np.linalg.norm(pts - pts[nxt], axis=1))
    return chosen


def refresh_bank(images, labels, stage1_fn, num, epoch, batch_size=32, eps=1e-5):
    """Collect stage-1 styles over the training set and FPS-select per class.

    `stage1_fn` maps an image batch (ndarray) to the stage-1 feature Tensor;
    the pass runs without gradient recording.
    """
    labels = np.asarray(labels)
    mus, sigmas = [], []
    with T.no_grad():
        for i in range(0, len(images), batch_size):
            feat = stage1_fn(images[i : i + batch_size])
            mu, sigma = compute_style_stats(feat, eps)
            mus.append(mu)
            sigmas.append(sigma)
    mu = np.concatenate(mus)
    sigma = np.concatenate(sigmas)

    banks = {}
    for cls in (REAL, SPOOF):
        idx = np.flatnonzero(labels == cls)
        if idx.size == 0:
            raise ValueError(f"class {cls} missing from dataset; both classes required")
        vectors = np.concatenate([mu[idx], sigma[idx]], axis=1)
        picked = idx[fps_select(vectors, num)]
        banks[cls] = (mu[picked].copy(), sigma[picked].copy())
    return StyleBank(
        real_mu=banks[REAL][0], real_sigma=banks[REAL][1],
        spoof_mu=banks[SPOOF][0], spoof_sigma=banks[SPOOF][1],
        epoch_stamp=epoch,
    )


def sample_weights(num, rng):
    """One draw from Dirichlet(1/num, ..., 1/num) via normalized gammas."""
    if num < 1:
        raise ValueError("need at least one basis style")
    if num == 1:
        return np.ones(1)
    g = rng.gamma(1.0 / num, size=num)
    total = g.sum()
    if total == 0.0:  # all gammas underflowed; vanishingly rare at small 1/num
        return np.full(num, 1.0 / num)
    return g / total


def assemble_style(weights, bank, cls):
    """Convex combination of the class-c basis styles."""
    mu_base, sigma_base = bank.basis(cls)
    return weights @ mu_base, weights @ sigma_base


def reassemble(f_org, mu_aug, sigma_aug, eps=1e-5):
    """AdaIN re-stylization of (N,C,H,W) content onto target (N,C) stats.

    Differentiable w.r.t. f_org; the target stats are treated as constants.
    """
    n, c, h, w = f_org.shape
    mu = T.global_avg_pool(f_org)
    centered = f_org - T.expand_spatial(mu, h, w)
    var = T.global_avg_pool(centered * centered)
    sigma = T.sqrt(var + T.Tensor(eps))
    target_mu = mu_aug if isinstance(mu_aug, T.Tensor) else T.Tensor(np.broadcast_to(mu_aug, (n, c)))
    target_sigma = sigma_aug if isinstance(sigma_aug, T.Tensor) else T.Tensor(np.broadcast_to(sigma_aug, (n, c)))
    normalized = centered / T.expand_spatial(sigma, h, w)
    return normalized * T.expand_spatial(target_sigma, h, w) + T.expand_spatial(target_mu, h, w)


def augment_batch(stage1_feat, labels, bank, rng, eps=1e-5):
    """CSA augmentation: one Dirichlet draw per instance, class-matched basis."""
    labels = np.asarray(labels)
    n, c = stage1_feat.shape[0], stage1_feat.shape[1]
    target_mu = np.empty((n, c))
    target_sigma = np.empty((n, c))
    for i in range(n):
        w = sample_weights(bank.size, rng)
        target_mu[i], target_sigma[i] = assemble_style(w, bank, int(labels[i]))
    return reassemble(stage1_feat, target_mu, target_sigma, eps)


def random_mix_batch(stage1_feat, rng, eps=1e-5):
    """Ablation arm: restyle each instance with another random instance's stats."""
    n = stage1_feat.shape[0]
    mu, sigma = compute_style_stats(stage1_feat, eps)
    partner = rng.integers(0, n, size=n)
    return reassemble(stage1_feat, mu[partner], sigma[partner], eps)
