"""Convolution kernels against a naive nested-loop oracle, plus backend parity."""

import numpy as np
import pytest

from iadg import kernels
from iadg import tensor as T
from iadg.kernels import python_backend
from iadg.tensor import Rng, ShapeError, Tensor


def naive_conv2d(x, k, b, stride, pad):
    """Direct six-loop convolution; the reference oracle."""
    n, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for ni in range(n):
        for co in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                acc += k[co, ci, i, j] * xp[ni, ci, oy * stride + i, ox * stride + j]
                    out[ni, co, oy, ox] = acc + b[co]
    return out


def naive_dwconv(x, k, pad):
    """Per-sample depthwise oracle."""
    n, c, h, w = x.shape
    _, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, c, h, w))
    for ni in range(n):
        for ci in range(c):
            for oy in range(h):
                for ox in range(w):
                    acc = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            acc += k[ni, ci, i, j] * xp[ni, ci, oy + i, ox + j]
                    out[ni, ci, oy, ox] = acc
    return out


@pytest.mark.parametrize("stride,pad,shape,kshape", [
    (1, 1, (2, 3, 6, 6), (4, 3, 3, 3)),
    (2, 1, (1, 2, 8, 8), (3, 2, 3, 3)),
    (1, 0, (2, 1, 5, 5), (2, 1, 3, 3)),
    (1, 2, (1, 2, 4, 4), (2, 2, 5, 5)),
])
def test_conv2d_matches_naive_oracle_exactly(stride, pad, shape, kshape):
    rng = Rng(11, stride * 10 + pad)
    x = rng.normal(1.0, shape)
    k = rng.normal(1.0, kshape)
    b = rng.normal(1.0, kshape[0])
    got = T.conv2d(Tensor(x), Tensor(k), Tensor(b), stride, pad).data
    want = naive_conv2d(x, k, b, stride, pad)
    assert np.array_equal(got, want)  # bit-exact: same accumulation order


def test_dwconv2d_matches_naive_oracle_exactly():
    rng = Rng(12)
    x = rng.normal(1.0, (2, 3, 5, 5))
    k = rng.normal(1.0, (2, 3, 3, 3))
    got = T.dwconv2d(Tensor(x), Tensor(k), 1).data
    assert np.array_equal(got, naive_dwconv(x, k, 1))


def test_backend_forward_parity():
    """Compiled and pure-python kernels agree bit for bit on the forward pass."""
    rng = Rng(13)
    x = rng.normal(1.0, (2, 4, 8, 8))
    k = rng.normal(1.0, (6, 4, 3, 3))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    assert np.array_equal(python_backend.conv2d_fwd(xp, k, 1),
                          kernels.conv2d_fwd(xp, k, 1))
    dk = rng.normal(1.0, (2, 4, 3, 3))
    assert np.array_equal(python_backend.dwconv_fwd(xp, dk),
                          kernels.dwconv_fwd(xp, dk))


def test_backend_backward_close():
    rng = Rng(14)
    x = rng.normal(1.0, (2, 3, 6, 6))
    k = rng.normal(1.0, (4, 3, 3, 3))
    g = rng.normal(1.0, (2, 4, 6, 6))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    gx_py, gk_py, gb_py = python_backend.conv2d_bwd(g, xp, k, 1)
    gx, gk, gb = kernels.conv2d_bwd(g, xp, k, 1)
    assert np.allclose(gx_py, gx, rtol=1e-12, atol=1e-12)
    assert np.allclose(gk_py, gk, rtol=1e-12, atol=1e-12)
    assert np.allclose(gb_py, gb, rtol=1e-12, atol=1e-12)


def test_conv2d_gradients_vs_finite_differences():
    rng = Rng(15)
    x = rng.normal(1.0, (2, 2, 5, 5))
    k = rng.normal(1.0, (3, 2, 3, 3))
    b = rng.normal(1.0, 3)
    proj = Tensor(rng.normal(1.0, (2, 3, 5, 5)))
    assert T.grad_check(lambda a: T.tsum(T.conv2d(a, Tensor(k), Tensor(b), 1, 1) * proj), x) < 1e-6
    assert T.grad_check(lambda a: T.tsum(T.conv2d(Tensor(x), a, Tensor(b), 1, 1) * proj), k) < 1e-6
    assert T.grad_check(lambda a: T.tsum(T.conv2d(Tensor(x), Tensor(k), a, 1, 1) * proj), b) < 1e-6


def test_dwconv2d_gradients():
    rng = Rng(16)
    x = rng.normal(1.0, (2, 2, 4, 4))
    k = rng.normal(1.0, (2, 2, 3, 3))
    assert T.grad_check(lambda a: T.tsum(T.dwconv2d(a, Tensor(k), 1)), x) < 1e-6
    assert T.grad_check(lambda a: T.tsum(T.dwconv2d(Tensor(x), a, 1)), k) < 1e-6


def test_conv2d_shape_validation():
    x = Tensor(np.zeros((1, 3, 6, 6)))
    with pytest.raises(ShapeError):  # channel mismatch
        T.conv2d(x, Tensor(np.zeros((4, 2, 3, 3))), Tensor(np.zeros(4)), 1, 1)
    with pytest.raises(ShapeError):  # even kernel
        T.conv2d(x, Tensor(np.zeros((4, 3, 2, 2))), Tensor(np.zeros(4)), 1, 1)
    with pytest.raises(ShapeError):  # kernel larger than padded input
        T.conv2d(x, Tensor(np.zeros((4, 3, 9, 9))), Tensor(np.zeros(4)), 1, 0)


def test_backend_selection_reports():
    assert kernels.BACKEND in ("cython", "python")
