"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is recorded implicitly: every op returns a Tensor holding its
parents and a closure that maps the incoming gradient to parent gradients.
``backward`` walks the graph in reverse topological order and accumulates
gradients additively across fan-out.
"""

import contextlib

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / bank refresh)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "name")

    def __init__(self, data, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents) if _GRAD_ENABLED else ()
        self._backward = backward if _GRAD_ENABLED else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.data.shape}>"

    def detach(self):
        return Tensor(self.data)

    # operator sugar; everything routes through the module-level ops
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    @property
    def T(self):
        return transpose2d(self)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def item(self):
        return float(self.data)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _node(data, parents, backward):
    return Tensor(data, parents=parents, backward=backward)


# ---------------------------------------------------------------------------
# elementwise / linear algebra primitives


def add(a, b):
    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bwd)


def sub(a, b):
    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), bwd)


def mul(a, b):
    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bwd)


def div(a, b):
    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _node(a.data / b.data, (a, b), bwd)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), bwd)


def transpose2d(a):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose2d expects a matrix, got shape {a.shape}")

    def bwd(g):
        return (g.T,)

    return _node(a.data.T, (a,), bwd)


def relu(a):
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return _node(np.where(mask, a.data, 0.0), (a,), bwd)


def sigmoid(a):
    out = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                   np.exp(np.minimum(a.data, 0)) / (1.0 + np.exp(np.minimum(a.data, 0))))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _node(out, (a,), bwd)


def logsigmoid(a):
    # log(sigmoid(x)) = min(x, 0) - log1p(exp(-|x|)), stable for large |x|
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        s = np.where(x >= 0, np.exp(-x) / (1.0 + np.exp(-x)),
                     1.0 / (1.0 + np.exp(x)))  # sigmoid(-x)
        return (g * s,)

    return _node(out, (a,), bwd)


def exp(a):
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _node(out, (a,), bwd)


def log(a):
    def bwd(g):
        return (g / a.data,)

    return _node(np.log(a.data), (a,), bwd)


def sqrt(a):
    out = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / out,)

    return _node(out, (a,), bwd)


def absval(a):
    def bwd(g):
        return (g * np.sign(a.data),)

    return _node(np.abs(a.data), (a,), bwd)


def tsum(a):
    def bwd(g):
        return (np.full(a.shape, float(g)),)

    return _node(a.data.sum(), (a,), bwd)


def tmean(a):
    n = a.data.size

    def bwd(g):
        return (np.full(a.shape, float(g) / n),)

    return _node(a.data.mean(), (a,), bwd)


def reshape(a, shape):
    def bwd(g):
        return (g.reshape(a.shape),)

    return _node(a.data.reshape(shape), (a,), bwd)


def concat(tensors, axis):
    """Concatenate along `axis`; for feature maps axis=1 requires equal N,H,W."""
    shapes = [t.shape for t in tensors]
    ref = list(shapes[0])
    for s in shapes[1:]:
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise ShapeError(f"concat along axis {axis} with mismatched shapes {shapes}")
    sizes = [s[axis] for s in shapes]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def narrow(a, axis, start, length):
    """Slice `length` entries from `start` along `axis`."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _node(a.data[idx], (a,), bwd)


def expand_spatial(a, h, w):
    """Broadcast an (N,C) tensor to (N,C,h,w)."""
    if a.data.ndim != 2:
        raise ShapeError(f"expand_spatial expects (N,C), got {a.shape}")

    def bwd(g):
        return (g.sum(axis=(2, 3)),)

    return _node(np.broadcast_to(a.data[:, :, None, None], a.shape + (h, w)).copy(), (a,), bwd)


# ---------------------------------------------------------------------------
# conv-net primitives


def conv2d(x, k, b, stride=1, pad=0):
    """Cross-correlation of (N,Cin,H,W) with (Cout,Cin,kh,kw) plus bias (Cout,)."""
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/kernel, got {x.shape} and {k.shape}")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = k.shape
    if kcin != cin:
        raise ShapeError(f"conv2d kernel expects Cin={kcin} but input has C={cin}")
    if b.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {b.shape} != ({cout},)")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel size must be odd, got {kh}x{kw}")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"conv2d spatial size {h}x{w} (pad {pad}) smaller than kernel {kh}x{kw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    xp = np.ascontiguousarray(xp)
    out = kernels.conv2d_fwd(xp, np.ascontiguousarray(k.data), stride)
    out += b.data[None, :, None, None]

    def bwd(g):
        gxp, gk, gb = kernels.conv2d_bwd(np.ascontiguousarray(g), xp,
                                         np.ascontiguousarray(k.data), stride)
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        return gx, gk, gb

    return _node(out, (x, k, b), bwd)


def dwconv2d(x, k, pad=0):
    """Per-sample depthwise conv: (N,C,H,W) with per-sample kernels (N,C,kh,kw)."""
    n, c, h, w = x.shape
    if k.shape[0] != n or k.shape[1] != c:
        raise ShapeError(f"dwconv2d kernels {k.shape} do not match input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    xp = np.ascontiguousarray(xp)
    out = kernels.dwconv_fwd(xp, np.ascontiguousarray(k.data))

    def bwd(g):
        gxp, gk = kernels.dwconv_bwd(np.ascontiguousarray(g), xp,
                                     np.ascontiguousarray(k.data))
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        return gx, gk

    return _node(out, (x, k), bwd)


def instance_norm(x, eps=1e-5):
    """Per-(sample, channel) standardization over spatial positions."""
    if x.data.ndim != 4:
        raise ShapeError(f"instance_norm expects (N,C,H,W), got {x.shape}")
    n, c, h, w = x.shape
    hw = h * w
    m = x.data.mean(axis=(2, 3), keepdims=True)
    v = x.data.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m) * inv

    def bwd(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gx = (g - gm - xhat * (g * xhat).mean(axis=(2, 3), keepdims=True)) * inv
        return (gx,)

    return _node(xhat, (x,), bwd)


def global_avg_pool(x):
    """(N,C,H,W) -> (N,C) spatial mean."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (N,C,H,W), got {x.shape}")
    hw = x.shape[2] * x.shape[3]

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None] / hw, x.shape).copy(),)

    return _node(x.data.mean(axis=(2, 3)), (x,), bwd)


def dense(x, w, b):
    """(N,F) @ (F,O) + (O,)"""
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# backward pass and verification


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(loss):
    """Populate .grad on every tensor reachable from the scalar `loss`."""
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.grad is None or node._backward is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64)
            else:
                parent.grad = parent.grad + g


def gradients(loss, leaves):
    """Gradient map for `leaves`; unreachable leaves get zeros."""
    for l in leaves:
        l.grad = None
    backward(loss)
    return [np.zeros(l.shape) if l.grad is None else l.grad for l in leaves]


def grad_check(f, x, step=None, sample=None, sample_seed=0):
    """Max relative error between analytic gradient of f and central differences.

    `f` maps a Tensor to a scalar Tensor; `x` is a plain array or Tensor.
    With `sample` set, only that many (deterministically chosen) input entries
    are probed numerically; the analytic gradient is still computed in full.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if step is None:
        step = 1e-4 * max(1.0, float(np.max(np.abs(x0))) if x0.size else 1.0)

    xt = Tensor(x0.copy())
    loss = f(xt)
    (analytic,) = gradients(loss, [xt])

    flat = x0.ravel()
    if sample is not None and sample < flat.size:
        idx = Rng(sample_seed, 0x6D).permutation(flat.size)[:sample]
    else:
        idx = np.arange(flat.size)
    worst = 0.0
    aflat = analytic.ravel()
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        up = float(f(Tensor(x0)).data)
        flat[i] = orig - step
        dn = float(f(Tensor(x0)).data)
        flat[i] = orig
        numeric = (up - dn) / (2.0 * step)
        denom = max(abs(aflat[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(aflat[i] - numeric) / denom)
    return float(worst)


# ---------------------------------------------------------------------------
# seedable counter-based RNG


_U64 = 0xFFFFFFFFFFFFFFFF


def _mix(a, b):
    """SplitMix64-style mixing of two 64-bit values into one."""
    z = (int(a) ^ (int(b) * 0x9E3779B97F4A7C15)) & _U64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return z ^ (z >> 31)


class Rng:
    """Counter-based (Philox) generator; independent streams via key splitting."""

    def __init__(self, seed, stream=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self._bg = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        self.gen = np.random.Generator(self._bg)

    def split(self, key):
        """Derive an independent stream keyed by an integer."""
        child = _mix(np.uint64(self.stream), np.uint64(int(key) & 0xFFFFFFFFFFFFFFFF))
        return Rng(self.seed, int(child))

    def uniform(self, low, high, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, scale=1.0, size=None):
        return self.gen.normal(0.0, scale, size)

    def integers(self, low, high, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def gamma(self, shape, size=None):
        return self.gen.gamma(shape, 1.0, size)

    def raw64(self, size):
        return self.gen.integers(0, 2**64, size=size, dtype=np.uint64)
