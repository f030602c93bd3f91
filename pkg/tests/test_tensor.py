"""Autodiff engine: op gradients, broadcasting, graph mechanics, RNG."""

import numpy as np
import pytest

from iadg import tensor as T
from iadg.tensor import Rng, ShapeError, Tensor


def test_basic_arithmetic_values():
    a = Tensor(np.array([1.0, 2.0, 3.0]))
    b = Tensor(np.array([4.0, 5.0, 6.0]))
    assert np.allclose((a + b).data, [5, 7, 9])
    assert np.allclose((a * b).data, [4, 10, 18])
    assert np.allclose((b - a).data, [3, 3, 3])
    assert np.allclose((b / a).data, [4, 2.5, 2])


def test_backward_requires_scalar():
    a = Tensor(np.ones(3))
    with pytest.raises(ShapeError):
        T.backward(a)


def test_fanout_accumulates():
    x = Tensor(2.0)
    y = x * x + x  # dy/dx = 2x + 1 = 5
    T.backward(y)
    assert np.allclose(x.grad, 5.0)


def test_gradients_zero_for_unreachable_leaf():
    x = Tensor(1.0)
    z = Tensor(1.0)
    y = x * x
    gx, gz = T.gradients(y, [x, z])
    assert np.allclose(gx, 2.0)
    assert np.allclose(gz, 0.0)


def test_no_grad_blocks_taping():
    x = Tensor(3.0)
    with T.no_grad():
        y = x * x
    assert y._parents == ()


def test_broadcast_gradient_unbroadcasts():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones(3))
    T.backward(T.tsum(a * b))
    assert b.grad.shape == (3,)
    assert np.allclose(b.grad, 2.0)  # summed over the broadcast axis


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


@pytest.mark.parametrize("op,make", [
    ("add", lambda a: T.tsum(a + Tensor(np.ones(a.shape)))),
    ("mul", lambda a: T.tsum(a * a)),
    ("div", lambda a: T.tsum(Tensor(np.ones(a.shape)) / (a * a + Tensor(1.0)))),
    ("relu", lambda a: T.tsum(T.relu(a))),
    ("sigmoid", lambda a: T.tsum(T.sigmoid(a))),
    ("logsigmoid", lambda a: T.tsum(T.logsigmoid(a))),
    ("exp", lambda a: T.tsum(T.exp(a))),
    ("sqrt", lambda a: T.tsum(T.sqrt(a * a + Tensor(1.0)))),
    ("abs", lambda a: T.tsum(T.absval(a))),
    ("mean", lambda a: T.tmean(a * a)),
])
def test_elementwise_gradients(op, make):
    rng = Rng(41, hash(op) & 0xFFFF)
    x = rng.normal(1.0, (3, 4)) + 0.1  # keep away from relu/abs kinks
    assert T.grad_check(make, x) < 1e-6


def test_matmul_gradient():
    rng = Rng(7)
    b = Tensor(rng.normal(1.0, (4, 2)))
    x = rng.normal(1.0, (3, 4))
    assert T.grad_check(lambda a: T.tsum(T.matmul(a, b)), x) < 1e-6


def test_concat_narrow_roundtrip_and_grads():
    rng = Rng(9)
    x = rng.normal(1.0, (2, 6, 3, 3))
    t = Tensor(x)
    a, b = T.narrow(t, 1, 0, 3), T.narrow(t, 1, 3, 3)
    back = T.concat([a, b], axis=1)
    assert np.array_equal(back.data, x)
    assert T.grad_check(
        lambda v: T.tsum(T.concat([T.narrow(v, 1, 0, 3) * Tensor(2.0),
                                   T.narrow(v, 1, 3, 3)], axis=1)), x) < 1e-6


def test_instance_norm_output_stats():
    rng = Rng(3)
    x = Tensor(rng.normal(2.0, (2, 4, 5, 5)) + 3.0)
    y = T.instance_norm(x, 1e-8)
    assert np.allclose(y.data.mean(axis=(2, 3)), 0.0, atol=1e-12)
    assert np.allclose(y.data.var(axis=(2, 3)), 1.0, atol=1e-6)


def test_instance_norm_gradient():
    rng = Rng(4)
    x = rng.normal(1.0, (2, 3, 4, 4))
    proj = Tensor(rng.normal(1.0, x.shape))
    assert T.grad_check(lambda a: T.tsum(T.instance_norm(a, 1e-5) * proj), x) < 1e-5


def test_global_avg_pool_and_expand():
    rng = Rng(5)
    x = rng.normal(1.0, (2, 3, 4, 4))
    pooled = T.global_avg_pool(Tensor(x))
    assert np.allclose(pooled.data, x.mean(axis=(2, 3)))
    expanded = T.expand_spatial(pooled, 4, 4)
    assert expanded.shape == (2, 3, 4, 4)
    assert T.grad_check(
        lambda a: T.tsum(T.expand_spatial(T.global_avg_pool(a), 4, 4) * Tensor(x)),
        x) < 1e-6


def test_logsigmoid_stable_at_extremes():
    x = Tensor(np.array([-800.0, 0.0, 800.0]))
    y = T.logsigmoid(x).data
    assert np.isfinite(y).all()
    assert np.allclose(y[1], np.log(0.5))
    assert np.allclose(y[0], -800.0)


# --- rng ---


def test_rng_determinism_and_stream_independence():
    a = Rng(123, 5).normal(1.0, 10)
    b = Rng(123, 5).normal(1.0, 10)
    c = Rng(123, 6).normal(1.0, 10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rng_split_reproducible():
    r = Rng(42, 7)
    assert np.array_equal(r.split(3).uniform(0, 1, 4), Rng(42, 7).split(3).uniform(0, 1, 4))
    assert not np.array_equal(r.split(3).uniform(0, 1, 4), r.split(4).uniform(0, 1, 4))


def test_mix_is_u64_and_deterministic():
    v = T._mix(2**63, 2**62 + 17)
    assert 0 <= v <= 0xFFFFFFFFFFFFFFFF
    assert v == T._mix(2**63, 2**62 + 17)
    assert T._mix(1, 2) != T._mix(2, 1)


def test_permutation_is_a_permutation():
    p = Rng(0).permutation(50)
    assert sorted(p.tolist()) == list(range(50))
