"""Dynamic kernel generator block.

Splits the channels of the input map, runs a static 3x3 conv on one half,
generates per-sample depthwise 3x3 kernels from the pooled other half, and
fuses both branches with a 1x1 conv followed by relu.
"""

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

KERNEL_SIZE = 3

MODES = ("dkg", "static_only", "dynamic_only")


def init_dkg(c, rng, zero_generator=True):
    """Parameters for a DKG block over `c` channels (c must be even).

    The dense generator is zero-initialized by default so training starts in
    the pure-static regime.
    """
    if c % 2:
        raise ShapeError(f"DKG needs an even channel count, got {c}")
    half = c // 2
    k = KERNEL_SIZE
    fan_s = half * k * k
    params = {
        "static_w": Tensor(rng.uniform(-1, 1, (half, half, k, k)) / np.sqrt(fan_s)),
        "static_b": Tensor(np.zeros(half)),
        "gen_w": Tensor(np.zeros((half, half * k * k)) if zero_generator
                        else rng.uniform(-1, 1, (half, half * k * k)) / np.sqrt(half)),
        "gen_b": Tensor(np.zeros(half * k * k)),
        "fuse_w": Tensor(rng.uniform(-1, 1, (c, c, 1, 1)) / np.sqrt(c)),
        "fuse_b": Tensor(np.zeros(c)),
    }
    return params


def split_channels(x):
    """First half / last half of the channel dimension."""
    c = x.shape[1]
    if c % 2:
        raise ShapeError(f"cannot split odd channel count {c}")
    half = c // 2
    return T.narrow(x, 1, 0, half), T.narrow(x, 1, half, half)


def generate_kernels(x_hat, params):
    """Per-sample depthwise kernels (N, C/2, k, k) from the pooled half-map."""
    n, half = x_hat.shape[0], x_hat.shape[1]
    pooled = T.global_avg_pool(x_hat)                       # (N, C/2)
    flat = T.dense(pooled, params["gen_w"], params["gen_b"])
    return T.reshape(flat, (n, half, KERNEL_SIZE, KERNEL_SIZE))


def dkg_forward(x, params, mode="dkg"):
    """F = relu(f2(concat(static(x_tilde), dwconv(x_hat; generated))))."""
    if mode not in MODES:
        raise ValueError(f"unknown DKG mode {mode!r}")
    x_hat, x_tilde = split_channels(x)
    pad = KERNEL_SIZE // 2

    if mode == "dynamic_only":
        z_tilde = Tensor(np.zeros(x_tilde.shape))
    else:
        z_tilde = T.conv2d(x_tilde, params["static_w"], params["static_b"], 1, pad)

    if mode == "static_only":
        z_hat = Tensor(np.zeros(x_hat.shape))
    else:
        kernels = generate_kernels(x_hat, params)
        z_hat = T.dwconv2d(x_hat, kernels, pad)

    fused = T.concat([z_tilde, z_hat], axis=1)
    return T.relu(T.conv2d(fused, params["fuse_w"], params["fuse_b"], 1, 0))
