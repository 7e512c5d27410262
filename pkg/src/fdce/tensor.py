"""Minimal dense tensor with reverse-mode automatic differentiation.

Tensors wrap row-major numpy arrays (float32 or float64). Every operation
that touches a tensor with ``requires_grad=True`` records a backward closure;
``Tensor.backward()`` replays the tape in reverse topological order and
accumulates gradients additively across fan-out.
"""

from __future__ import annotations

import math

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)

LEAKY_SLOPE = 0.2  # default negative slope for leaky_relu

# tanh-approximation constants for gelu
_GELU_C = math.sqrt(2.0 / math.pi)


class TensorError(ValueError):
    """Shape or usage violation in a tensor operation."""


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in FLOAT_DTYPES:
        return arr
    return arr.astype(np.float32)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense n-dimensional array participating in a recorded computation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad=False, dtype=None,
                 _parents=(), _backward=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents)
        self.grad = None
        self._parents = tuple(_parents) if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self._done = False

    # ------------------------------------------------------------------
    # basics
    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # ------------------------------------------------------------------
    # autodiff
    # ------------------------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise TensorError("backward() requires a scalar loss")
        if self._done:
            raise TensorError("backward() already called on this record")
        self._done = True

        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, grad):
        grad = np.asarray(grad, dtype=self.data.dtype)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    # ------------------------------------------------------------------
    # elementwise arithmetic
    # ------------------------------------------------------------------
    def _coerce(self, other):
        return other if isinstance(other, Tensor) else Tensor(
            np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        out_data = self.data + other.data

        def back(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.shape))
        return Tensor(out_data, _parents=(self, other), _backward=back)

    __radd__ = __add__

    def __neg__(self):
        def back(g):
            self._accum(-g)
        return Tensor(-self.data, _parents=(self,), _backward=back)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        out_data = self.data * other.data

        def back(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.shape))
        return Tensor(out_data, _parents=(self, other), _backward=back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out_data = self.data / other.data

        def back(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.data / (other.data ** 2),
                                          other.shape))
        return Tensor(out_data, _parents=(self, other), _backward=back)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TensorError("only scalar exponents are supported")

        def back(g):
            self._accum(g * exponent * self.data ** (exponent - 1))
        return Tensor(self.data ** exponent, _parents=(self,), _backward=back)

    # ------------------------------------------------------------------
    # elementwise functions
    # ------------------------------------------------------------------
    def exp(self):
        out_data = np.exp(self.data)

        def back(g):
            self._accum(g * out_data)
        return Tensor(out_data, _parents=(self,), _backward=back)

    def log(self):
        def back(g):
            self._accum(g / self.data)
        return Tensor(np.log(self.data), _parents=(self,), _backward=back)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def back(g):
            self._accum(g * 0.5 / out_data)
        return Tensor(out_data, _parents=(self,), _backward=back)

    def abs(self):
        def back(g):
            self._accum(g * np.sign(self.data))
        return Tensor(np.abs(self.data), _parents=(self,), _backward=back)

    def tanh(self):
        out_data = np.tanh(self.data)

        def back(g):
            self._accum(g * (1.0 - out_data ** 2))
        return Tensor(out_data, _parents=(self,), _backward=back)

    def cos(self):
        def back(g):
            self._accum(-g * np.sin(self.data))
        return Tensor(np.cos(self.data), _parents=(self,), _backward=back)

    def sin(self):
        def back(g):
            self._accum(g * np.cos(self.data))
        return Tensor(np.sin(self.data), _parents=(self,), _backward=back)

    # ------------------------------------------------------------------
    # reductions and shape ops
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                axes = tuple(a % self.ndim for a in axes)
                g = np.expand_dims(g, axes)
            self._accum(np.broadcast_to(g, self.shape))
        return Tensor(out_data, _parents=(self,), _backward=back)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for a in axes:
                n *= self.shape[a % self.ndim]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def back(g):
            self._accum(g.reshape(self.shape))
        return Tensor(self.data.reshape(shape), _parents=(self,), _backward=back)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)

        def back(g):
            self._accum(g.transpose(inv))
        return Tensor(self.data.transpose(axes), _parents=(self,), _backward=back)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, key):
        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            self._accum(full)
        return Tensor(self.data[key], _parents=(self,), _backward=back)


# ----------------------------------------------------------------------
# free functions
# ----------------------------------------------------------------------
def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def concat(tensors, axis=0):
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])
    return Tensor(out_data, _parents=tuple(tensors), _backward=back)


def stack(tensors, axis=0):
    expanded = []
    for t in tensors:
        d = np.expand_dims(t.data, axis)

        def back(g, t=t, axis=axis):
            t._accum(np.squeeze(g, axis))
        expanded.append(Tensor(d, _parents=(t,), _backward=back))
    return concat(expanded, axis=axis)


def matmul(a, b):
    if a.shape[-1] != b.shape[-2]:
        raise TensorError(
            f"matmul inner extents differ: {a.shape} vs {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def back(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accum(_unbroadcast(gb, b.shape))
    return Tensor(out_data, _parents=(a, b), _backward=back)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2D convolution (cross-correlation) with zero padding.

    x: [B, Cin, H, W]; weight: [Cout, Cin, kh, kw]; bias: [Cout] or None.
    Output extent: H' = floor((H + 2p - kh) / stride) + 1.
    """
    B, Cin, H, W = x.shape
    Cout, Cin_w, kh, kw = weight.shape
    if Cin != Cin_w:
        raise TensorError(f"conv2d channel mismatch: {Cin} vs {Cin_w}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise TensorError("conv2d kernel extents must be odd")
    if stride < 1 or padding < 0:
        raise TensorError("conv2d requires stride >= 1 and padding >= 0")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise TensorError("conv2d output extent would be empty")

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding),
                             (padding, padding)))
    else:
        xp = x.data
    out_data = np.zeros((B, Cout, Ho, Wo), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
            out_data += np.moveaxis(
                np.tensordot(patch, weight.data[:, :, i, j], axes=([1], [1])),
                3, 1)
    if bias is not None:
        out_data += bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i:i + stride * Ho:stride,
                           j:j + stride * Wo:stride]
                if weight.requires_grad:
                    gw = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
                    if weight.grad is None:
                        weight.grad = np.zeros_like(weight.data)
                    weight.grad[:, :, i, j] += gw
                if x.requires_grad:
                    gxp[:, :, i:i + stride * Ho:stride,
                        j:j + stride * Wo:stride] += np.moveaxis(
                        np.tensordot(g, weight.data[:, :, i, j],
                                     axes=([1], [0])), 3, 1)
        if x.requires_grad:
            if padding:
                x._accum(gxp[:, :, padding:padding + H, padding:padding + W])
            else:
                x._accum(gxp)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))
    return Tensor(out_data, _parents=parents, _backward=back)


def upsample2x(x):
    """Nearest-neighbor 2x upsampling of [B, C, H, W]."""
    out_data = x.data.repeat(2, axis=2).repeat(2, axis=3)
    B, C, H, W = x.shape

    def back(g):
        x._accum(g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)))
    return Tensor(out_data, _parents=(x,), _backward=back)


def sigmoid(x):
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def back(g):
        x._accum(g * out_data * (1.0 - out_data))
    return Tensor(out_data, _parents=(x,), _backward=back)


def leaky_relu(x, slope=LEAKY_SLOPE):
    factor = np.where(x.data >= 0, 1.0, slope).astype(x.data.dtype)

    def back(g):
        x._accum(g * factor)
    return Tensor(x.data * factor, _parents=(x,), _backward=back)


def gelu(x):
    """GELU, tanh approximation."""
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    return 0.5 * x * (1.0 + inner.tanh())


def activation(x, kind):
    if kind == "leaky_relu":
        return leaky_relu(x)
    if kind == "gelu":
        return gelu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise TensorError(f"unknown activation kind: {kind!r}")


def atan2(y, x):
    """Elementwise atan2(y, x); result in (-pi, pi]."""
    denom = y.data ** 2 + x.data ** 2

    def back(g):
        if y.requires_grad:
            y._accum(g * x.data / denom)
        if x.requires_grad:
            x._accum(-g * y.data / denom)
    return Tensor(np.arctan2(y.data, x.data), _parents=(y, x), _backward=back)


def softmax(x, axis=-1):
    """Numerically stable softmax along `axis` (max-subtracted)."""
    if not -x.ndim <= axis < x.ndim:
        raise TensorError(f"softmax axis {axis} out of range for {x.shape}")
    shift = x - x.data.max(axis=axis, keepdims=True)
    e = shift.exp()
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Layer normalization over the last axis, then affine (gamma, beta)."""
    if eps <= 0:
        raise TensorError("layer_norm requires eps > 0")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered / (var + eps).sqrt()
    return normed * gamma + beta


def assert_finite(t, context=""):
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values detected {context}")
    return t


def finite_diff_check(f, xs, h=1e-6):
    """Max relative error between analytic grads of scalar f and central
    differences, over every coordinate of every tensor in `xs`."""
    if isinstance(xs, Tensor):
        xs = [xs]
    for x in xs:
        x.zero_grad()
    loss = f(*xs)
    if loss.size != 1:
        raise TensorError("finite_diff_check requires a scalar function")
    loss.backward()
    worst = 0.0
    for x in xs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*xs).item()
            flat[i] = orig - h
            fm = f(*xs).item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst
