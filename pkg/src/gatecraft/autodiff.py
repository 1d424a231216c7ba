"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape-based engine: every operation produces a new :class:`Tensor`
holding its value, references to its parents and a closure that pushes the
incoming gradient back to them.  ``backward`` on a scalar root walks the
graph once in reverse topological order.  Everything is computed in 64-bit
precision so analytic gradients can be checked against central finite
differences at tight tolerances.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, expit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""

    def __init__(self, op, message):
        self.op = op
        super().__init__(f"{op}: {message}")


class Tensor:
    """A dense float64 array with an optional gradient and graph provenance."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

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

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def _accumulate(self, g):
        # gradient pieces are only ever read, never mutated in place, so
        # aliasing the incoming array is safe and avoids a copy per edge
        if self.grad is None:
            self.grad = g if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def backward(self):
        backward(self)

    # operator sugar; scalars are wrapped as constant tensors
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

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, idx):
        return tensor_slice(self, idx)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data):
    """A tensor that never requires gradients."""
    return Tensor(data, requires_grad=False)


def _make(data, parents, backward_fn, op):
    requires = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=requires,
        _parents=tuple(parents) if requires else (),
        _backward=backward_fn if requires else None,
        op=op,
    )


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"operands {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    _broadcast_check("add", a, b)
    out_data = a.data + b.data

    def backward_fn(g, out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward_fn, "add")


def sub(a, b):
    _broadcast_check("sub", a, b)
    out_data = a.data - b.data

    def backward_fn(g, out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward_fn, "sub")


def mul(a, b):
    _broadcast_check("mul", a, b)
    out_data = a.data * b.data

    def backward_fn(g, out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward_fn, "mul")


def div(a, b):
    _broadcast_check("div", a, b)
    out_data = a.data / b.data

    def backward_fn(g, out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward_fn, "div")


def scale(a, c):
    """Multiply by a python scalar constant."""
    c = float(c)
    out_data = a.data * c

    def backward_fn(g, out):
        if a.requires_grad:
            a._accumulate(g * c)

    return _make(out_data, (a,), backward_fn, "scale")


def minimum(a, b):
    """Elementwise minimum; on ties the gradient is routed to the first operand."""
    _broadcast_check("min", a, b)
    out_data = np.minimum(a.data, b.data)

    def backward_fn(g, out):
        take_a = a.data <= b.data
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return _make(out_data, (a, b), backward_fn, "min")


def maximum(a, b):
    """Elementwise maximum; on ties the gradient is routed to the first operand."""
    _broadcast_check("max", a, b)
    out_data = np.maximum(a.data, b.data)

    def backward_fn(g, out):
        take_a = a.data >= b.data
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return _make(out_data, (a, b), backward_fn, "max")


def clamp(a, lo, hi):
    """Clip to [lo, hi].  The subgradient at exactly lo or hi is the
    interior-side derivative, i.e. boundary points pass gradients through."""
    lo, hi = float(lo), float(hi)
    out_data = np.clip(a.data, lo, hi)

    def backward_fn(g, out):
        if a.requires_grad:
            inside = (a.data >= lo) & (a.data <= hi)
            a._accumulate(g * inside)

    return _make(out_data, (a,), backward_fn, "clamp")


# ---------------------------------------------------------------------------
# transcendental / activation


def log(a):
    out_data = np.log(a.data)

    def backward_fn(g, out):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(out_data, (a,), backward_fn, "log")


def exp(a):
    out_data = np.exp(a.data)

    def backward_fn(g, out):
        if a.requires_grad:
            a._accumulate(g * out.data)

    return _make(out_data, (a,), backward_fn, "exp")


def sigmoid(a):
    out_data = expit(a.data)

    def backward_fn(g, out):
        if a.requires_grad:
            a._accumulate(g * out.data * (1.0 - out.data))

    return _make(out_data, (a,), backward_fn, "sigmoid")


def gelu(a):
    """Gaussian-CDF GeLU: x * Phi(x), with the exact erf form."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_data = x * cdf

    def backward_fn(g, out):
        if a.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
            a._accumulate(g * (cdf + x * pdf))

    return _make(out_data, (a,), backward_fn, "gelu")


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g, out):
        if a.requires_grad:
            y = out.data
            a._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(out_data, (a,), backward_fn, "softmax")


# ---------------------------------------------------------------------------
# reductions


def tensor_sum(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g, out):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
        else:
            g_exp = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g_exp, a.shape))

    return _make(out_data, (a,), backward_fn, "sum")


def mean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[i] for i in axis]))
    else:
        n = a.shape[axis]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# shape manipulation


def tensor_slice(a, idx):
    out_data = a.data[idx]

    def backward_fn(g, out):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)

    return _make(out_data, (a,), backward_fn, "slice")


def concat(tensors, axis=0):
    tensors = list(tensors)
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != axis % len(base) and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError("concat", f"shapes {base} and {other} differ off axis {axis}")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g, out):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(out_data, tuple(tensors), backward_fn, "concat")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    out_data = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def backward_fn(g, out):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inverse))

    return _make(out_data, (a,), backward_fn, "transpose")


def reshape(a, newshape):
    out_data = a.data.reshape(newshape)

    def backward_fn(g, out):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), backward_fn, "reshape")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", f"operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", f"inner dims differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward_fn(g, out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(out_data, (a, b), backward_fn, "matmul")


def conv1d(x, w, stride=1):
    """Valid (unpadded) 1-D convolution.

    ``x`` is [batch, in_channels, T], ``w`` is [out_channels, in_channels, K];
    the output is [batch, out_channels, floor((T - K) / stride) + 1].
    """
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError("conv1d", f"need 3-D input and kernel, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError("conv1d", f"channel mismatch: input {x.shape[1]} vs kernel {w.shape[1]}")
    k = w.shape[2]
    t_in = x.shape[2]
    if k > t_in:
        raise ShapeError("conv1d", f"kernel {k} longer than input {t_in}")
    stride = int(stride)
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=2)[:, :, ::stride, :]
    out_data = np.einsum("bitk,oik->bot", windows, w.data)
    t_out = out_data.shape[2]

    def backward_fn(g, out):
        if w.requires_grad:
            w._accumulate(np.einsum("bot,bitk->oik", g, windows))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for kk in range(k):
                gx[:, :, kk : kk + t_out * stride : stride] += np.einsum(
                    "bot,oi->bit", g, w.data[:, :, kk]
                )
            x._accumulate(gx)

    return _make(out_data, (x, w), backward_fn, "conv1d")


# ---------------------------------------------------------------------------
# normalization (composite: gradients flow through the primitive ops)


def layernorm(x, gamma, beta, eps=1e-5, weights=None):
    """Normalize the last axis to zero mean / unit variance, then affine.

    ``weights`` (same length as the last axis) turns the statistics into a
    weighted mean/variance; entries with weight 0 are excluded from the
    statistics, which is what makes pruned hidden dimensions physically
    removable without changing the result.
    """
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError("layernorm", f"affine params {gamma.shape}/{beta.shape} vs input {x.shape}")
    # both branches divide by the weight mass so that all-ones weights are
    # bitwise identical to the unweighted path
    if weights is None:
        denom = constant(float(x.shape[-1]))
        mu = div(tensor_sum(x, axis=-1, keepdims=True), denom)
        centered = sub(x, mu)
        var = div(tensor_sum(mul(centered, centered), axis=-1, keepdims=True), denom)
    else:
        denom = tensor_sum(weights)
        mu = div(tensor_sum(mul(x, weights), axis=-1, keepdims=True), denom)
        centered = sub(x, mu)
        var = div(tensor_sum(mul(mul(centered, centered), weights), axis=-1, keepdims=True), denom)
    inv_std = exp(scale(log(add(var, constant(eps))), -0.5))
    return add(mul(mul(centered, inv_std), gamma), beta)


# ---------------------------------------------------------------------------
# generic dispatch and backward pass

_OPS = {
    "add": lambda inputs, attrs: add(*inputs),
    "sub": lambda inputs, attrs: sub(*inputs),
    "mul": lambda inputs, attrs: mul(*inputs),
    "div": lambda inputs, attrs: div(*inputs),
    "matmul": lambda inputs, attrs: matmul(*inputs),
    "conv1d": lambda inputs, attrs: conv1d(*inputs, stride=attrs.get("stride", 1)),
    "sigmoid": lambda inputs, attrs: sigmoid(*inputs),
    "gelu": lambda inputs, attrs: gelu(*inputs),
    "softmax": lambda inputs, attrs: softmax(*inputs, axis=attrs.get("axis", -1)),
    "log": lambda inputs, attrs: log(*inputs),
    "exp": lambda inputs, attrs: exp(*inputs),
    "clamp": lambda inputs, attrs: clamp(*inputs, attrs["lo"], attrs["hi"]),
    "min": lambda inputs, attrs: minimum(*inputs),
    "max": lambda inputs, attrs: maximum(*inputs),
    "sum": lambda inputs, attrs: tensor_sum(
        *inputs, axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)
    ),
    "mean": lambda inputs, attrs: mean(
        *inputs, axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)
    ),
    "scale": lambda inputs, attrs: scale(*inputs, attrs["factor"]),
    "concat": lambda inputs, attrs: concat(inputs, axis=attrs.get("axis", 0)),
    "slice": lambda inputs, attrs: tensor_slice(*inputs, attrs["index"]),
    "layernorm": lambda inputs, attrs: layernorm(
        *inputs, eps=attrs.get("eps", 1e-5), weights=attrs.get("weights")
    ),
    # extensions beyond the core kinds; same contract, same gradient checks
    "transpose": lambda inputs, attrs: transpose(*inputs, axes=attrs.get("axes")),
    "reshape": lambda inputs, attrs: reshape(*inputs, attrs["newshape"]),
}

OP_KINDS = tuple(_OPS)


def forward_op(kind, inputs, attrs=None):
    """Apply an operation by name.  See ``OP_KINDS`` for the vocabulary."""
    if kind not in _OPS:
        raise ShapeError(kind, f"unknown op kind; expected one of {sorted(_OPS)}")
    return _OPS[kind](list(inputs), attrs or {})


def _topo_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root):
    """Accumulate gradients of a scalar root into every requires_grad tensor.

    Interior nodes' gradients are owned by the traversal and cleared on
    entry; leaf tensors accumulate across calls until explicitly reset.
    """
    if root.size != 1:
        raise ShapeError("backward", f"root must be scalar-shaped, got {root.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    for node in order:
        if node._parents:
            node.grad = None
    root._accumulate(np.ones_like(root.data))
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad, node)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None
