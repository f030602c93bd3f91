"""Pure-numpy convolution kernels.

Fallback used when the compiled extension is unavailable.  Accumulation
happens tap by tap in (cin, kh, kw) order so the results are bit-identical
to both the compiled backend and the naive nested-loop definition of
cross-correlation.

All functions take the *already padded* input; the caller owns padding.
"""

import numpy as np


def conv2d_fwd(xp, k, stride):
    """Cross-correlate padded input (N,Cin,Hp,Wp) with kernel (Cout,Cin,kh,kw)."""
    n, cin, hp, wp = xp.shape
    cout, _, kh, kw = k.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for ci in range(cin):
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, ci, i : i + (oh - 1) * stride + 1 : stride,
                        j : j + (ow - 1) * stride + 1 : stride]
                out += k[None, :, ci, i, j, None, None] * xs[:, None]
    return out


def conv2d_bwd(go, xp, k, stride):
    """Gradients of conv2d_fwd w.r.t. padded input, kernel and bias."""
    n, cin, hp, wp = xp.shape
    cout, _, kh, kw = k.shape
    oh, ow = go.shape[2], go.shape[3]
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(k)
    gb = go.sum(axis=(0, 2, 3))
    for ci in range(cin):
        for i in range(kh):
            for j in range(kw):
                sl_h = slice(i, i + (oh - 1) * stride + 1, stride)
                sl_w = slice(j, j + (ow - 1) * stride + 1, stride)
                xs = xp[:, ci, sl_h, sl_w]
                gk[:, ci, i, j] = np.tensordot(go, xs, axes=([0, 2, 3], [0, 1, 2]))
                gxp[:, ci, sl_h, sl_w] += np.tensordot(go, k[:, ci, i, j], axes=([1], [0]))
    return gxp, gk, gb


def dwconv_fwd(xp, k):
    """Per-sample depthwise conv: input (N,C,Hp,Wp), kernels (N,C,kh,kw), stride 1."""
    n, c, hp, wp = xp.shape
    kh, kw = k.shape[2], k.shape[3]
    oh, ow = hp - kh + 1, wp - kw + 1
    out = np.zeros((n, c, oh, ow))
    for i in range(kh):
        for j in range(kw):
            out += k[:, :, i, j, None, None] * xp[:, :, i : i + oh, j : j + ow]
    return out


def dwconv_bwd(go, xp, k):
    """Gradients of dwconv_fwd w.r.t. padded input and per-sample kernels."""
    n, c, hp, wp = xp.shape
    kh, kw = k.shape[2], k.shape[3]
    oh, ow = go.shape[2], go.shape[3]
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(k)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i : i + oh, j : j + ow]
            gk[:, :, i, j] = (go * xs).sum(axis=(2, 3))
            gxp[:, :, i : i + oh, j : j + ow] += go * k[:, :, i, j, None, None]
    return gxp, gk
