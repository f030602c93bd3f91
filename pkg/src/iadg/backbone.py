"""Three-stage feature extractor with one DKG block per stage.

Each stage is: 3x3 conv -> IN -> relu, then the DKG block (the stage's second
conv block), then a stride-2 3x3 conv -> IN -> relu.  The style hook is the
output of stage 1; the whitening / head hook is the output of stage 3.
"""

from dataclasses import dataclass

import numpy as np

from . import dkg
from . import tensor as T
from .tensor import ShapeError, Tensor

DEFAULT_PLAN = (3, 16, 32, 64)


@dataclass
class BranchOutputs:
    stage1_feat: object  # Tensor (N, plan[1], S/2, S/2)
    final_feat: object   # Tensor (N, plan[3], S/8, S/8)


def _conv_block(c_in, c_out, rng):
    fan = c_in * 9
    return {
        "w": Tensor(rng.uniform(-1, 1, (c_out, c_in, 3, 3)) / np.sqrt(fan)),
        "b": Tensor(np.zeros(c_out)),
        # learnable IN affine; without it, pooled post-IN activations are
        # nearly identical across samples and the cls head cannot separate
        "g": Tensor(np.ones((c_out, 1, 1))),
        "beta": Tensor(np.zeros((c_out, 1, 1))),
    }


def _conv_in_relu(x, block, stride, eps):
    x = T.conv2d(x, block["w"], block["b"], stride, 1)
    return T.relu(T.instance_norm(x, eps) * block["g"] + block["beta"])


def init_backbone(rng, plan=DEFAULT_PLAN, kernel_mode="dkg"):
    """Parameter tree for the extractor.

    kernel_mode "off" swaps each DKG block for a plain static conv block of
    the same width (the IN-only baseline); the other modes are handled inside
    the DKG forward.
    """
    if any(c % 2 for c in plan[1:]):
        raise ShapeError(f"stage channel counts must be even, got {plan}")
    stages = []
    for s in range(3):
        c_in, c_out = plan[s], plan[s + 1]
        stage = {
            "conv": _conv_block(c_in, c_out, rng.split(3 * s)),
            "down": _conv_block(c_out, c_out, rng.split(3 * s + 2)),
        }
        if kernel_mode == "off":
            stage["block2"] = _conv_block(c_out, c_out, rng.split(3 * s + 1))
        else:
            stage["block2"] = dkg.init_dkg(c_out, rng.split(3 * s + 1))
        stages.append(stage)
    return {"stages": stages, "plan": tuple(plan), "kernel_mode": kernel_mode}


def _stage_forward(x, stage, kernel_mode, eps):
    x = _conv_in_relu(x, stage["conv"], 1, eps)
    if kernel_mode == "off":
        x = _conv_in_relu(x, stage["block2"], 1, eps)
    else:
        x = dkg.dkg_forward(x, stage["block2"], kernel_mode)
    return _conv_in_relu(x, stage["down"], 2, eps)


def stage1_forward(images, params, eps=1e-5):
    if images.shape[2] % 8 or images.shape[3] % 8:
        raise ShapeError(f"input size {images.shape[2:]} must be divisible by 8")
    if images.shape[1] != params["plan"][0]:
        raise ShapeError(f"expected {params['plan'][0]} input channels, got {images.shape[1]}")
    return _stage_forward(images, params["stages"][0], params["kernel_mode"], eps)


def tail_forward(stage1_feat, params, eps=1e-5):
    x = stage1_feat
    for stage in params["stages"][1:]:
        x = _stage_forward(x, stage, params["kernel_mode"], eps)
    return x


def extract(images, params, eps=1e-5):
    """Full forward pass: (stage1 hook, final hook)."""
    s1 = stage1_forward(images, params, eps)
    return BranchOutputs(stage1_feat=s1, final_feat=tail_forward(s1, params, eps))


def forward_dual(images, params, bank, labels, rng, csa_mode="csa", eps=1e-5):
    """Original and style-augmented branches sharing one stage-1 pass.

    The augmented branch re-stylizes the stage-1 features (CSA or the
    random-mix ablation) before running stages 2-3.  Inference never calls
    this; it uses `extract` on the original branch only.
    """
    from . import style  # local import keeps style free to stay backbone-agnostic

    s1 = stage1_forward(images, params, eps)
    f_org = BranchOutputs(stage1_feat=s1, final_feat=tail_forward(s1, params, eps))
    if csa_mode == "csa":
        if bank is None:
            raise ValueError("CSA branch requires a populated style bank")
        s1_aug = style.augment_batch(s1, labels, bank, rng, eps)
    elif csa_mode == "random_mix":
        s1_aug = style.random_mix_batch(s1, rng, eps)
    else:
        raise ValueError(f"unknown CSA mode {csa_mode!r}")
    f_aug = BranchOutputs(stage1_feat=s1_aug, final_feat=tail_forward(s1_aug, params, eps))
    return f_org, f_aug


def param_items(params, prefix="backbone"):
    """Flat (name, Tensor) pairs for the optimizer and checkpoints."""
    items = []
    for s, stage in enumerate(params["stages"]):
        for block, entries in stage.items():
            for key, t in entries.items():
                items.append((f"{prefix}.s{s}.{block}.{key}", t))
    return items
