"""Feature extractor: shapes, validation, dual-branch forward."""

import numpy as np
import pytest

from iadg import backbone, style
from iadg import tensor as T
from iadg.tensor import Rng, ShapeError, Tensor


PLAN = (3, 4, 8, 8)


def _params(seed=0, kernel_mode="dkg"):
    return backbone.init_backbone(Rng(seed), PLAN, kernel_mode)


def test_plan_must_have_even_channels():
    with pytest.raises(ShapeError):
        backbone.init_backbone(Rng(0), (3, 5, 8, 8))


def test_extract_shapes():
    p = _params()
    x = Tensor(Rng(1).normal(1.0, (2, 3, 16, 16)))
    outs = backbone.extract(x, p)
    assert outs.stage1_feat.shape == (2, 4, 8, 8)
    assert outs.final_feat.shape == (2, 8, 2, 2)


def test_input_validation():
    p = _params()
    with pytest.raises(ShapeError):  # not divisible by 8
        backbone.stage1_forward(Tensor(np.zeros((1, 3, 12, 12))), p)
    with pytest.raises(ShapeError):  # wrong channel count
        backbone.stage1_forward(Tensor(np.zeros((1, 1, 16, 16))), p)


def test_kernel_mode_off_uses_plain_conv():
    p = _params(kernel_mode="off")
    assert "w" in p["stages"][0]["block2"]
    x = Tensor(Rng(2).normal(1.0, (1, 3, 16, 16)))
    assert backbone.extract(x, p).final_feat.shape == (1, 8, 2, 2)


def test_deterministic_init():
    a = backbone.param_items(_params(seed=5))
    b = backbone.param_items(_params(seed=5))
    for (na, ta), (nb, tb) in zip(a, b):
        assert na == nb
        assert np.array_equal(ta.data, tb.data)


def test_param_names_unique():
    names = [n for n, _ in backbone.param_items(_params())]
    assert len(names) == len(set(names))


def _toy_bank(p, rng):
    feats = rng.normal(1.0, (8, 3, 16, 16))
    labels = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    return style.refresh_bank(
        feats, labels,
        lambda im: backbone.stage1_forward(Tensor(im), p), 2, epoch=1)


def test_forward_dual_shares_stage1():
    p = _params()
    rng = Rng(3)
    bank = _toy_bank(p, rng)
    x = Tensor(rng.normal(1.0, (2, 3, 16, 16)))
    f_org, f_aug = backbone.forward_dual(x, p, bank, np.array([1, 0]), Rng(4), "csa")
    assert f_org.final_feat.shape == f_aug.final_feat.shape
    # augmented stage-1 differs from the original
    assert not np.array_equal(f_org.stage1_feat.data, f_aug.stage1_feat.data)


def test_forward_dual_requires_bank_for_csa():
    p = _params()
    x = Tensor(Rng(5).normal(1.0, (2, 3, 16, 16)))
    with pytest.raises(ValueError):
        backbone.forward_dual(x, p, None, np.array([1, 0]), Rng(6), "csa")


def test_forward_dual_random_mix_needs_no_bank():
    p = _params()
    x = Tensor(Rng(7).normal(1.0, (2, 3, 16, 16)))
    f_org, f_aug = backbone.forward_dual(x, p, None, np.array([1, 0]), Rng(8), "random_mix")
    assert f_aug.final_feat.shape == (2, 8, 2, 2)


def test_extract_deterministic():
    p = _params()
    x = Rng(9).normal(1.0, (2, 3, 16, 16))
    a = backbone.extract(Tensor(x), p).final_feat.data
    b = backbone.extract(Tensor(x), p).final_feat.data
    assert np.array_equal(a, b)
