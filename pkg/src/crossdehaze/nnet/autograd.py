"""Reverse-mode automatic differentiation on numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it with
a closure that maps the output gradient to input gradients. ``Tape.backward``
walks the record in reverse. Leaf tensors created with ``requires_grad=True``
(parameters, probed inputs) accumulate into ``.grad`` with ``+=``; gradients
of intermediate nodes live only for the duration of one backward pass.
"""
from __future__ import annotations

import threading

import numpy as np

from .. import kernels

_local = threading.local()


class TapeError(RuntimeError):
    pass


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape():
    s = _stack()
    return s[-1] if s else None


class Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss):
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise TapeError("loss node was not recorded on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None:
                    continue
                if t.tape is not None:
                    k = id(t)
                    grads[k] = grads[k] + gi if k in grads else gi
                elif t.requires_grad:
                    if t.grad is None:
                        t.grad = np.array(gi, dtype=t.data.dtype, copy=True)
                    else:
                        t.grad += gi


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    @property
    def tracked(self):
        return self.requires_grad or self.tape is not None

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _record(data, inputs, backward):
    """Wrap ``data`` in a Tensor, recording the op when any input is tracked."""
    out = Tensor(data)
    if not any(t.tracked for t in inputs):
        return out
    tapes = {id(t.tape): t.tape for t in inputs if t.tape is not None}
    if len(tapes) > 1:
        raise TapeError("cannot combine nodes recorded on different tapes")
    tape = next(iter(tapes.values())) if tapes else active_tape()
    if tape is None:
        return out
    tape.nodes.append(Node(out, tuple(inputs), backward))
    out.tape = tape
    return out


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def detach(x):
    return Tensor(x.data)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b):
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b):
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def backward(g):
        return unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)

    return _record(ad * bd, (a, b), backward)


def div(a, b):
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def backward(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _record(ad / bd, (a, b), backward)


def square(x):
    xd = x.data
    return _record(xd * xd, (x,), lambda g: (2.0 * xd * g,))


def abs_(x):
    xd = x.data
    return _record(np.abs(xd), (x,), lambda g: (np.sign(xd) * g,))


def _gelu_grad(x):
    return kernels.gelu_grad(x)


def gelu(x):
    """GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    xd = x.data
    return _record(kernels.gelu_forward(xd), (x,), lambda g: (g * _gelu_grad(xd),))


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (x,), backward)


# ---------------------------------------------------------------------------
# reductions and shape


def sum_(x, axis=None, keepdims=False):
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x, axis=None, keepdims=False):
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis, keepdims), 1.0 / n)


def reshape(x, shape):
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    inv = tuple(np.argsort(axes))
    return _record(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def index(x, idx):
    """Basic (slice) indexing."""
    shape, dt = x.shape, x.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dt)
        out[idx] = g
        return (out,)

    return _record(x.data[idx].copy(), (x,), backward)


def matmul(a, b):
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _record(ad @ bd, (a, b), backward)


def reflect_indices(n, before, after, mode="reflect"):
    """Source index for each padded position.

    ``reflect`` mirrors about the edge sample (d c b | a b c d), ``symmetric``
    repeats it (c b a | a b c d); the names follow ``numpy.pad``.
    """
    pos = np.arange(-before, n + after)
    if mode == "symmetric":
        m = np.mod(pos, 2 * n)
        return np.where(m < n, m, 2 * n - 1 - m)
    if mode != "reflect":
        raise ValueError(f"unknown padding mode {mode!r}")
    if n == 1:
        return np.zeros_like(pos)
    period = 2 * (n - 1)
    m = np.mod(pos, period)
    return np.where(m < n, m, period - m)


def _fold_matrix(idx, n, dtype):
    m = np.zeros((idx.shape[0], n), dtype=dtype)
    m[np.arange(idx.shape[0]), idx] = 1.0
    return m


def pad_reflect(x, top, bottom, left, right, mode="reflect"):
    """Mirror-pad the last two axes (see :func:`reflect_indices` for ``mode``)."""
    if top == bottom == left == right == 0:
        return x
    h, w = x.shape[-2], x.shape[-1]
    ih = reflect_indices(h, top, bottom, mode)
    iw = reflect_indices(w, left, right, mode)
    y = x.data.take(ih, axis=-2).take(iw, axis=-1)

    def backward(g):
        mh = _fold_matrix(ih, h, g.dtype)
        mw = _fold_matrix(iw, w, g.dtype)
        return (np.swapaxes(mh, 0, 1) @ g @ mw,)

    return _record(y, (x,), backward)


def upsample2x(x):
    y = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        s = g.shape
        return (g.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2)).sum(axis=(-3, -1)),)

    return _record(y, (x,), backward)


# ---------------------------------------------------------------------------
# image ops


def conv2d(x, w, b=None, stride=1, padding="reflect"):
    """Cross-correlation, x (N, C, H, W), w (O, C, K, K); reflect padding keeps H/stride."""
    k = w.shape[-1]
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv input has {x.shape[1]} channels, weights expect {w.shape[1]}")
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    p = k // 2
    if padding == "reflect" and p:
        x = pad_reflect(x, p, p, p, p)
    xd, wd = x.data, w.data
    out = kernels.conv2d_forward(xd, wd, stride)

    def backward(g):
        gx = kernels.conv2d_backward_input(g, wd, xd.shape, stride) if x.tracked else None
        gw = kernels.conv2d_backward_weight(g, xd, k, stride) if w.tracked else None
        return gx, gw

    y = _record(out, (x, w), backward)
    if b is not None:
        y = add(y, reshape(b, (1, -1, 1, 1)))
    return y


def instance_norm(x, eps=1e-5):
    """Normalize each (sample, channel) plane to zero mean, unit variance."""
    xd = x.data
    mu = xd.mean(axis=(-2, -1), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(-2, -1), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=(-2, -1), keepdims=True)
        gxm = (g * xhat).mean(axis=(-2, -1), keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return _record(xhat, (x,), backward)


def sep_filter(x, kv, kh):
    """Fixed separable 'valid' filter over the last two axes."""
    h, w = x.shape[-2], x.shape[-1]
    kv = np.asarray(kv, dtype=x.dtype)
    kh = np.asarray(kh, dtype=x.dtype)
    y = kernels.sep_filter_valid(x.data, kv, kh)
    return _record(y, (x,), lambda g: (kernels.sep_filter_valid_transpose(g, kv, kh, h, w),))
