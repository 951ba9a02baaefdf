"""Reverse-mode differentiation over dense numpy tensors.

Design: every op eagerly computes its value and records a backward closure on
the output tensor; `backward()` walks the recorded graph once in reverse
topological order. No in-place mutation, no fusion. Precision follows the
operand dtype (float32 or float64); mixing the two in one op is an error.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericalError, ValidationError

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # Operator sugar; all route through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _wrap(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    a = _wrap(a, like=tb)
    b = _wrap(b, like=ta)
    if a.dtype != b.dtype:
        raise ValidationError(
            f"mixed-precision operands: {a.dtype.name} vs {b.dtype.name}"
        )
    return a, b


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError("op produced non-finite values")
    out = Tensor(data)
    out._parents = tuple(parents)
    out._backward = backward
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    # Accumulation only ever rebinds t.grad, so aliasing g is safe.
    g = np.asarray(g, dtype=t.dtype)
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape`, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise binary ops --------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        _acc(a, _unbroadcast(g * b.data, a.shape))
        _acc(b, _unbroadcast(g * a.data, b.shape))

    with np.errstate(over="ignore"):
        out_data = a.data * b.data
    return _node(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        _acc(a, _unbroadcast(g / b.data, a.shape))
        _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data
    return _node(out_data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValidationError("matmul requires operands with ndim >= 2")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _acc(a, _unbroadcast(ga, a.shape))
        _acc(b, _unbroadcast(gb, b.shape))

    return _node(np.matmul(a.data, b.data), (a, b), backward)


def where(cond: np.ndarray, a, b) -> Tensor:
    """Elementwise select; `cond` is a constant boolean array."""
    a, b = _pair(a, b)
    cond = np.asarray(cond, dtype=bool)

    def backward(g):
        _acc(a, _unbroadcast(np.where(cond, g, 0.0), a.shape))
        _acc(b, _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _node(np.where(cond, a.data, b.data), (a, b), backward)


# --- shape ops ---------------------------------------------------------------


def reshape(t: Tensor, shape) -> Tensor:
    t = _wrap(t)
    old_shape = t.shape

    def backward(g):
        _acc(t, g.reshape(old_shape))

    return _node(t.data.reshape(shape), (t,), backward)


def transpose(t: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    t = _wrap(t)
    if axes is None:
        axes = tuple(reversed(range(t.data.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _acc(t, g.transpose(inverse))

    return _node(t.data.transpose(axes), (t,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise ValidationError("concat of zero tensors")
    if len({t.dtype for t in ts}) != 1:
        raise ValidationError("concat operands must share a dtype")
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _acc(t, g[tuple(idx)])

    return _node(np.concatenate([t.data for t in ts], axis=axis), ts, backward)


def slice_(t: Tensor, key) -> Tensor:
    """Basic numpy indexing (slices / ints); gradient scatters back."""
    t = _wrap(t)

    def backward(g):
        gz = np.zeros_like(t.data)
        gz[key] = g
        _acc(t, gz)

    return _node(t.data[key], (t,), backward)


def gather(t: Tensor, indices, axis: int = 0) -> Tensor:
    """Take rows (or entries along `axis`) by an integer index array."""
    t = _wrap(t)
    idx = np.asarray(indices, dtype=np.intp)

    def backward(g):
        gz = np.zeros_like(t.data)
        np.add.at(gz, tuple([slice(None)] * axis + [idx]), g)
        _acc(t, gz)

    return _node(np.take(t.data, idx, axis=axis), (t,), backward)


def broadcast_to(t: Tensor, shape) -> Tensor:
    t = _wrap(t)

    def backward(g):
        _acc(t, _unbroadcast(g, t.shape))

    return _node(np.broadcast_to(t.data, shape).copy(), (t,), backward)


# --- elementwise unary ops ---------------------------------------------------


def exp(t) -> Tensor:
    t = _wrap(t)
    with np.errstate(over="ignore"):
        out_data = np.exp(t.data)

    def backward(g):
        _acc(t, g * out_data)

    return _node(out_data, (t,), backward)


def log(t) -> Tensor:
    t = _wrap(t)

    def backward(g):
        _acc(t, g / t.data)

    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(t.data)
    return _node(out_data, (t,), backward)


def sqrt(t) -> Tensor:
    t = _wrap(t)
    with np.errstate(invalid="ignore"):
        out_data = np.sqrt(t.data)

    def backward(g):
        _acc(t, g * 0.5 / out_data)

    return _node(out_data, (t,), backward)


def tanh(t) -> Tensor:
    t = _wrap(t)
    out_data = np.tanh(t.data)

    def backward(g):
        _acc(t, g * (1.0 - out_data * out_data))

    return _node(out_data, (t,), backward)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(t) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    t = _wrap(t)
    x = t.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    th = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + th)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        local = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner
        _acc(t, g * local)

    return _node(out_data, (t,), backward)


def abs_(t) -> Tensor:
    t = _wrap(t)

    def backward(g):
        _acc(t, g * np.sign(t.data))

    return _node(np.abs(t.data), (t,), backward)


# --- reductions and normalizers ----------------------------------------------


def sum_(t, axis=None, keepdims: bool = False) -> Tensor:
    t = _wrap(t)

    def backward(g):
        if axis is None:
            _acc(t, np.broadcast_to(g, t.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _acc(t, np.broadcast_to(ge, t.shape).copy())

    return _node(t.data.sum(axis=axis, keepdims=keepdims), (t,), backward)


def mean(t, axis=None, keepdims: bool = False) -> Tensor:
    t = _wrap(t)
    n = t.data.size if axis is None else t.shape[axis]

    def backward(g):
        if axis is None:
            _acc(t, np.broadcast_to(g / n, t.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _acc(t, np.broadcast_to(ge / n, t.shape).copy())

    return _node(t.data.mean(axis=axis, keepdims=keepdims), (t,), backward)


def variance(t, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance (ddof=0)."""
    t = _wrap(t)
    n = t.data.size if axis is None else t.shape[axis]
    mu = t.data.mean(axis=axis, keepdims=True)
    centered = t.data - mu

    def backward(g):
        if axis is None:
            ge = np.asarray(g)
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
        _acc(t, ge * 2.0 * centered / n)

    return _node((centered * centered).mean(axis=axis, keepdims=keepdims), (t,), backward)


def softmax(t, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along `axis`. Masked positions get exactly zero weight and the
    remainder renormalizes; a row with no valid position is an error."""
    t = _wrap(t)
    x = t.data
    if mask is None:
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
    else:
        mask_b = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask_b.any(axis=axis).all():
            raise NumericalError("fully masked softmax row")
        neg = np.where(mask_b, x, -np.inf)
        m = neg.max(axis=axis, keepdims=True)
        e = np.exp(np.where(mask_b, x - m, 0.0)) * mask_b
    s = e.sum(axis=axis, keepdims=True)
    y = e / s

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _acc(t, y * (g - dot))

    return _node(y, (t,), backward)


def layer_norm(t, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Normalize to zero mean / unit variance along `axis` (no learned affine)."""
    t = _wrap(t)
    x = t.data
    n = x.shape[axis]
    mu = x.mean(axis=axis, keepdims=True)
    var = x.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x - mu) * inv

    def backward(g):
        g_mean = g.mean(axis=axis, keepdims=True)
        gy_mean = (g * y).mean(axis=axis, keepdims=True)
        _acc(t, inv * (g - g_mean - y * gy_mean))

    return _node(y, (t,), backward)


# --- graph execution ----------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def backward(out: Tensor) -> None:
    """Accumulate gradients of a scalar `out` into every tensor in its graph."""
    if out.size != 1:
        raise ValidationError(f"backward requires a scalar output, got shape {out.shape}")
    if out._consumed:
        raise ValidationError("graph already consumed by a previous backward")
    order = _topo_order(out)
    out.grad = np.ones_like(out.data)
    for node in reversed(order):
        node._consumed = True
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    max_coords_per_param: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compare analytic gradients of the scalar `f()` against central finite
    differences at the current parameter values; returns the max relative
    error over the checked coordinates.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
    Intended for float64 tensors."""
    zero_grads(params)
    out = f()
    backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    zero_grads(params)

    max_err = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords_per_param is not None and flat.size > max_coords_per_param:
            gen = rng if rng is not None else np.random.default_rng(0)
            coords = gen.choice(flat.size, size=max_coords_per_param, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f().data.reshape(-1)[0])
            flat[i] = orig - eps
            f_minus = float(f().data.reshape(-1)[0])
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            an = float(a.reshape(-1)[i])
            err = abs(an - numeric) / max(abs(an), abs(numeric), 1e-8)
            max_err = max(max_err, err)
    return max_err
