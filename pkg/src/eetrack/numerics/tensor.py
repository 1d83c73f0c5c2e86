"""Minimal reverse-mode autodiff on dense numpy arrays.

A ``Tensor`` wraps an ndarray plus an optional gradient slot.  Operations
record an eager tape: each result keeps its parent tensors and a vector-
Jacobian-product closure.  ``backward`` walks the tape in reverse
topological order and accumulates gradients into every tensor that
requires them.  Tensors that take part in a recorded graph must not be
mutated in place.

Multiply-accumulate counting for cost models hooks into ``matmul`` (the
only place dense arithmetic concentrates; convolution is lowered onto it).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float64

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an operation's contract."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class MacCounter:
    """Accumulates multiply-accumulate counts from matmul calls."""

    def __init__(self) -> None:
        self.total = 0

    def add(self, n: int) -> None:
        self.total += n


_mac_counters: list[MacCounter] = []


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates of all matmuls executed in the block."""
    counter = MacCounter()
    _mac_counters.append(counter)
    try:
        yield counter
    finally:
        _mac_counters.remove(counter)


def _record_macs(n: int) -> None:
    for counter in _mac_counters:
        counter.add(n)


def _as_array(value, dtype=None) -> np.ndarray:
    if isinstance(value, np.ndarray):
        arr = value
    else:
        arr = np.asarray(value, dtype=dtype or DEFAULT_DTYPE)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(dtype or DEFAULT_DTYPE)
    return arr


class Tensor:
    """Dense N-d array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- gradient machinery ---------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(parent) into every requires_grad tensor.

        ``self`` must be scalar.  Repeated calls accumulate; zero grads
        between steps.
        """
        if self.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                # vjp outputs are never mutated downstream, so aliasing is safe
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order (root first), iterative to spare the stack."""
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
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    order.reverse()
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap operands; non-tensor constants take the tensor operand's dtype."""
    a_is = isinstance(a, Tensor)
    b_is = isinstance(b, Tensor)
    if a_is and not b_is:
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if b_is and not a_is:
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return as_tensor(a), as_tensor(b)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach ``grad.shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcastable(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# -- arithmetic ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcastable(a.data, b.data, "add")
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcastable(a.data, b.data, "sub")
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcastable(a.data, b.data, "mul")
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcastable(a.data, b.data, "div")
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    """a ** exponent for a constant real exponent."""
    a = as_tensor(a)
    out = a.data ** exponent

    def vjp(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(out, (a,), vjp)


def maximum(a, b) -> Tensor:
    """Elementwise max; at ties the gradient routes to the first operand."""
    a, b = _pair(a, b)
    _check_broadcastable(a.data, b.data, "maximum")
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def vjp(g):
        return (_unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape))

    return _make(out, (a, b), vjp)


def minimum(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcastable(a.data, b.data, "minimum")
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def vjp(g):
        return (_unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape))

    return _make(out, (a, b), vjp)


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient is zero outside the interval."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def vjp(g):
        return (g * inside,)

    return _make(out, (a,), vjp)


# -- matmul -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the two trailing axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul: batch axes incompatible, {a.shape} x {b.shape}") from exc
    _record_macs(int(np.prod(batch, dtype=np.int64)) *
                 a.shape[-2] * a.shape[-1] * b.shape[-1])
    out = a.data @ b.data

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, (a, b), vjp)


# -- pointwise nonlinearities --------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _make(out, (a,), vjp)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), vjp)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _make(out, (a,), vjp)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * 0.5 / out,)

    return _make(out, (a,), vjp)


def square(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (g * 2.0 * a.data,)

    return _make(a.data * a.data, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp)


def log(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), vjp)


def absolute(a) -> Tensor:
    """|a|; subgradient 0 at the kink."""
    a = as_tensor(a)

    def vjp(g):
        return (g * np.sign(a.data),)

    return _make(np.abs(a.data), (a,), vjp)


# -- reductions ----------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape),)

    return _make(out, (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        count = a.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp / count, a.shape),)

    return _make(out, (a,), vjp)


# -- shape manipulation ----------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), vjp)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.transpose(axes)
    inv = None if axes is None else np.argsort(axes)

    def vjp(g):
        return (g.transpose(inv),)

    return _make(out, (a,), vjp)


def getitem(a, key) -> Tensor:
    """Basic indexing (ints/slices); backward scatters into the source."""
    a = as_tensor(a)
    out = a.data[key]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _make(out, (a,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for i, p in enumerate(parts):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return _make(out, tuple(parts), vjp)


def stack_scalars(values: Iterable) -> Tensor:
    """Stack scalar tensors/floats into a 1-d tensor."""
    return concat([reshape(as_tensor(v), (1,)) for v in values], axis=0)


# -- composites used throughout the model ----------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax; rows along ``axis`` sum to one."""
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), vjp)


def layernorm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("layernorm eps must be positive")
    a = as_tensor(a)
    centered = sub(a, tmean(a, axis=-1, keepdims=True))
    var = tmean(square(centered), axis=-1, keepdims=True)
    inv = div(1.0, sqrt(add(var, eps)))
    return add(mul(mul(centered, inv), gain), bias)


def _pad2d(a: Tensor, pad: int, mode: str) -> Tensor:
    """Pad the two trailing axes of a (..., H, W) tensor."""
    if pad == 0:
        return a
    h, w = a.shape[-2], a.shape[-1]
    lead = a.shape[:-2]
    if mode == "zeros":
        out = np.zeros(lead + (h + 2 * pad, w + 2 * pad), dtype=a.data.dtype)
        out[..., pad:-pad, pad:-pad] = a.data

        def vjp(g):
            return (g[..., pad:-pad, pad:-pad],)

        return _make(out, (a,), vjp)
    if mode == "reflect":
        idx_h = np.abs(np.arange(-pad, h + pad))
        idx_h = np.where(idx_h >= h, 2 * (h - 1) - idx_h, idx_h)
        idx_w = np.abs(np.arange(-pad, w + pad))
        idx_w = np.where(idx_w >= w, 2 * (w - 1) - idx_w, idx_w)
        out = a.data[..., idx_h[:, None], idx_w[None, :]]

        def vjp(g):
            full = np.zeros_like(a.data)
            np.add.at(full, (..., idx_h[:, None], idx_w[None, :]), g)
            return (full,)

        return _make(out, (a,), vjp)
    raise ValueError(f"unknown pad mode {mode!r}")


def _im2col(a: Tensor, kh: int, kw: int, stride: int) -> Tensor:
    """(B, C, H, W) -> (B, out_h*out_w, C*kh*kw) patch matrix."""
    b, c, h, w = a.shape
    out_h = (h - kh) // stride + 1
    out_w = (w - kw) // stride + 1
    i0 = stride * np.repeat(np.arange(out_h), out_w)
    j0 = stride * np.tile(np.arange(out_w), out_h)
    di = np.repeat(np.arange(kh), kw)
    dj = np.tile(np.arange(kw), kh)
    rows = i0[:, None] + di[None, :]          # (P, kh*kw)
    cols = j0[:, None] + dj[None, :]
    patches = a.data[:, :, rows, cols]        # (B, C, P, kh*kw)
    out = patches.transpose(0, 2, 1, 3).reshape(b, out_h * out_w, c * kh * kw)

    def vjp(g):
        g4 = g.reshape(b, out_h * out_w, c, kh * kw).transpose(0, 2, 1, 3)
        full = np.zeros_like(a.data)
        np.add.at(full, (slice(None), slice(None), rows, cols), g4)
        return (full,)

    return _make(out, (a,), vjp)


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0,
           pad_mode: str = "zeros") -> Tensor:
    """2-d convolution (cross-correlation) of (C_in, H, W) or batched
    (B, C_in, H, W) input with (C_out, C_in, kh, kw); lowered to a
    patch-matrix matmul."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be (Co,Ci,kh,kw), got {kernel.shape}")
    single = x.ndim == 3
    if single:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (C,H,W) or (B,C,H,W) input, got {x.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if c_in != x.shape[1]:
        raise ShapeError(f"conv2d: input channels {x.shape[1]} != kernel channels {c_in}")
    padded = _pad2d(x, padding, pad_mode)
    h, w = padded.shape[-2], padded.shape[-1]
    out_h = (h - kh) // stride + 1
    out_w = (w - kw) // stride + 1
    cols = _im2col(padded, kh, kw, stride)                      # (B, P, Ci*kh*kw)
    wmat = transpose(reshape(kernel, (c_out, c_in * kh * kw)))  # (Ci*kh*kw, Co)
    prod = matmul(cols, wmat)                                    # (B, P, Co)
    if bias is not None:
        prod = add(prod, as_tensor(bias))
    out = transpose(reshape(prod, (-1, out_h, out_w, c_out)), (0, 3, 1, 2))
    return reshape(out, out.shape[1:]) if single else out


# -- operator sugar -------------------------------------------------------

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = lambda self, other: div(self, other)
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__pow__ = lambda self, exponent: power(self, exponent)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.__getitem__ = lambda self, key: getitem(self, key)
Tensor.sum = lambda self, axis=None, keepdims=False: tsum(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: tmean(self, axis, keepdims)
Tensor.reshape = lambda self, shape: reshape(self, shape)
Tensor.transpose = lambda self, axes=None: transpose(self, axes)
