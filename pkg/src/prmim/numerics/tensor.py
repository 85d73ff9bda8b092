"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation builds a fresh graph node; nothing is reused between
forward passes and no op mutates its inputs. Gradients are exact
reverse-mode derivatives accumulated into ``grad`` on requires_grad
leaves by :func:`backward`.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .convolution import conv_backward, conv_forward


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class ParameterError(ValueError):
    """An op parameter is out of its valid range."""


class UsageError(RuntimeError):
    """An op was called in an unsupported way (e.g. non-scalar backward)."""


class Tensor:
    """A dense n-d float64 array plus an optional backward record.

    ``grad`` is populated by :func:`backward` for requires_grad leaves;
    interior nodes keep their vector-Jacobian products in a transient
    dict local to the backward call.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    # Convenience arithmetic; all graph-building ops live at module level.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(data, parents, vjp):
    """Create a graph node; prune the record when no parent needs gradients."""
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data
    return _node(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data
    return _node(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    return _node(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a, b):
    """Matrix product; both operands 2-d, or stacked with equal batch dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    if a.ndim != b.ndim and b.ndim != 2:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} @ {b.shape}")
    if a.ndim == b.ndim and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2 and a.ndim > 2:
            gb = np.matmul(a.data.reshape(-1, a.shape[-1]).T, g.reshape(-1, g.shape[-1]))
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _node(data, (a, b), vjp)


def reshape(t, shape):
    t = _as_tensor(t)
    data = t.data.reshape(shape)
    return _node(data, (t,), lambda g: (g.reshape(t.shape),))


def transpose(t, axes):
    t = _as_tensor(t)
    inv = tuple(np.argsort(axes))
    return _node(t.data.transpose(axes), (t,), lambda g: (g.transpose(inv),))


def slice_(t, key):
    """Basic indexing; gradient scatters back into a zero tensor."""
    t = _as_tensor(t)
    data = t.data[key]

    def vjp(g):
        gx = np.zeros_like(t.data)
        gx[key] = g
        return (gx,)

    return _node(np.array(data, copy=True), (t,), vjp)


def take_rows(t, idx):
    """Select rows (leading axis) by integer index; duplicates allowed."""
    t = _as_tensor(t)
    idx = np.asarray(idx, dtype=np.intp)
    data = t.data[idx]

    def vjp(g):
        gx = np.zeros_like(t.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _node(data, (t,), vjp)


def concat(parts, axis=0):
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _node(data, tuple(parts), vjp)


def broadcast_rows(t, n):
    """Tile a single row (1, d) to (n, d)."""
    t = _as_tensor(t)
    if t.ndim != 2 or t.shape[0] != 1:
        raise ShapeError(f"broadcast_rows expects a (1, d) tensor, got {t.shape}")
    data = np.broadcast_to(t.data, (n, t.shape[1])).copy()
    return _node(data, (t,), lambda g: (g.sum(axis=0, keepdims=True),))


def sum_(t):
    t = _as_tensor(t)
    return _node(np.array(t.data.sum()), (t,), lambda g: (np.broadcast_to(g, t.shape).copy(),))


def mean(t):
    t = _as_tensor(t)
    n = t.size
    return _node(
        np.array(t.data.mean()),
        (t,),
        lambda g: (np.broadcast_to(g / n, t.shape).copy(),),
    )


def softmax(t):
    """Numerically stable softmax over the last axis."""
    t = _as_tensor(t)
    z = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (t,), vjp)


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _phi(x):
    return 0.5 * (1.0 + erf(x / _SQRT2))


def gelu(t):
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    t = _as_tensor(t)
    cdf = _phi(t.data)
    data = t.data * cdf

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * t.data * t.data)
        return (g * (cdf + t.data * pdf),)

    return _node(data, (t,), vjp)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Last-axis normalization with population variance, then affine."""
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be > 0, got {eps}")
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last axis {c}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gamma.data * xhat + beta.data

    def vjp(g):
        gh = g * gamma.data
        gx = inv * (
            gh
            - gh.mean(axis=-1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        )
        axes = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _node(data, (x, gamma, beta), vjp)


def mse(pred, target):
    """Mean squared error over all elements; target is treated as constant."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes disagree: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = pred.size

    def vjp(g):
        return (g * 2.0 * diff / n,)

    return _node(np.array(np.mean(diff * diff)), (pred,), vjp)


def depthwise_conv2d(x, kernel, bias):
    """Per-channel same-size cross-correlation with zero padding.

    ``x`` is (C, H, W), ``kernel`` is (C, k, k) with k odd, ``bias`` is (C,).
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if x.ndim != 3 or kernel.ndim != 3 or bias.ndim != 1:
        raise ShapeError(
            f"depthwise_conv2d expects (C,H,W), (C,k,k), (C,), got "
            f"{x.shape}, {kernel.shape}, {bias.shape}"
        )
    c = x.shape[0]
    k = kernel.shape[1]
    if kernel.shape != (c, k, k) or bias.shape != (c,):
        raise ShapeError(
            f"depthwise_conv2d channel mismatch: x {x.shape}, kernel {kernel.shape}, "
            f"bias {bias.shape}"
        )
    if k % 2 == 0:
        raise ParameterError(f"depthwise_conv2d kernel size must be odd, got {k}")
    data = conv_forward(x.data, kernel.data, bias.data)

    def vjp(g):
        return conv_backward(x.data, kernel.data, np.ascontiguousarray(g))

    return _node(data, (x, kernel, bias), vjp)


def backward(loss, leaves=None):
    """Reverse-mode sweep from a scalar loss.

    Accumulates into ``grad`` on every requires_grad leaf reachable from
    ``loss``. When ``leaves`` is given, unreachable ones get a zero grad.
    """
    if loss.data.ndim != 0:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._parents:
            for parent, pg in zip(node._parents, node._vjp(g)):
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        elif node.requires_grad:
            if node.grad is None:
                node.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                node.grad = node.grad + g

    if leaves is not None:
        for leaf in leaves:
            if leaf.requires_grad and leaf.grad is None:
                leaf.zero_grad()
