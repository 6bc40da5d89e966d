"""Dense float64 tensors with a reverse-mode gradient tape.

Storage is row-major numpy float64. Every op validates its result: a NaN or
Inf in a forward value raises NonFiniteError instead of propagating. The tape
is dynamic; nodes record their parents only while gradients are enabled and
at least one input requires them.
"""

from __future__ import annotations

import contextlib

import numpy as np


class NonFiniteError(ArithmeticError):
    """A forward computation produced NaN or Inf."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor constructed with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is supported by scalar constants only")
        return mul(self, _as_tensor(1.0 / float(other)))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64), requires_grad=requires_grad)


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return arr


def _result(data: np.ndarray, op: str, parents: tuple[Tensor, ...]) -> tuple[Tensor, bool]:
    """Wrap op output; returns (tensor, record) where record says to attach a tape node."""
    _check_finite(data, op)
    record = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = record
    out.grad = None
    out._parents = tuple(p for p in parents if p.requires_grad) if record else ()
    out._backward = None
    return out, record


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    out, record = _result(data, "add", (a, b))
    if record:
        def backward():
            g = out.grad
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g, b.shape))
        out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    out, record = _result(data, "mul", (a, b))
    if record:
        def backward():
            g = out.grad
            if a.requires_grad:
                _accum(a, _unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g * a.data, b.shape))
        out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims of {a.shape} and {b.shape} differ")
    out, record = _result(a.data @ b.data, "matmul", (a, b))
    if record:
        def backward():
            g = out.grad
            if a.requires_grad:
                _accum(a, g @ b.data.T)
            if b.requires_grad:
                _accum(b, a.data.T @ g)
        out._backward = backward
    return out


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    out, record = _result(data, "concat", tuple(tensors))
    if record:
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward():
            g = out.grad
            for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(start, stop)
                    _accum(t, g[tuple(idx)])
        out._backward = backward
    return out


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    if not (0 <= start and start + length <= t.shape[axis]):
        raise ShapeError(f"narrow [{start}:{start + length}] out of range for axis {axis} of {t.shape}")
    idx = [slice(None)] * t.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out, record = _result(t.data[idx].copy(), "narrow", (t,))
    if record:
        def backward():
            g = np.zeros_like(t.data)
            g[idx] = out.grad
            _accum(t, g)
        out._backward = backward
    return out


def reshape(t: Tensor, shape) -> Tensor:
    out, record = _result(t.data.reshape(shape).copy(), "reshape", (t,))
    if record:
        def backward():
            _accum(t, out.grad.reshape(t.shape))
        out._backward = backward
    return out


def tsum(t: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out, record = _result(np.asarray(t.data.sum(axis=axis, keepdims=keepdims)), "sum", (t,))
    if record:
        def backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(t, np.broadcast_to(g, t.shape).copy())
        out._backward = backward
    return out


def mean(t: Tensor, axis: int | None = None) -> Tensor:
    n = t.size if axis is None else t.shape[axis]
    return tsum(t, axis=axis) * (1.0 / n)


def sigmoid(t: Tensor) -> Tensor:
    # split by sign for stability at large |x|
    x = t.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out, record = _result(data, "sigmoid", (t,))
    if record:
        def backward():
            _accum(t, out.grad * data * (1.0 - data))
        out._backward = backward
    return out


def tanh(t: Tensor) -> Tensor:
    data = np.tanh(t.data)
    out, record = _result(data, "tanh", (t,))
    if record:
        def backward():
            _accum(t, out.grad * (1.0 - data * data))
        out._backward = backward
    return out


def exp(t: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = np.exp(t.data)
    out, record = _result(data, "exp", (t,))
    if record:
        def backward():
            _accum(t, out.grad * data)
        out._backward = backward
    return out


def log(t: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(t.data)
    out, record = _result(data, "log", (t,))
    if record:
        def backward():
            _accum(t, out.grad / t.data)
        out._backward = backward
    return out


def log_floor(t: Tensor, floor: float = -30.0) -> Tensor:
    """log(x) clamped below at `floor`; gradient is zero on the clamped region."""
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.log(t.data)
    if np.any(np.isnan(raw)):
        raise NonFiniteError("log_floor of a negative value")
    active = raw > floor
    data = np.where(active, raw, floor)
    out, record = _result(data, "log_floor", (t,))
    if record:
        def backward():
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(active, out.grad / t.data, 0.0)
            _accum(t, g)
        out._backward = backward
    return out


def smooth_l1(t: Tensor) -> Tensor:
    """Elementwise Huber-style penalty: 0.5*x^2 if |x| < 1 else |x| - 0.5."""
    x = t.data
    quad = np.abs(x) < 1.0
    data = np.where(quad, 0.5 * x * x, np.abs(x) - 0.5)
    out, record = _result(data, "smooth_l1", (t,))
    if record:
        def backward():
            _accum(t, out.grad * np.where(quad, x, np.sign(x)))
        out._backward = backward
    return out


def softmax(t: Tensor, axis: int) -> Tensor:
    x = t.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    out, record = _result(data, "softmax", (t,))
    if record:
        def backward():
            g = out.grad
            inner = (g * data).sum(axis=axis, keepdims=True)
            _accum(t, data * (g - inner))
        out._backward = backward
    return out


def masked_softmax(t: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over entries where mask is True; masked entries are exactly 0.

    Every slice along `axis` must contain at least one valid entry.
    """
    if mask.shape != t.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match tensor shape {t.shape}")
    valid = mask.astype(bool)
    if not np.all(valid.any(axis=axis)):
        raise ShapeError("masked_softmax: a slice has no valid entries")
    x = np.where(valid, t.data, -np.inf)
    shifted = x - x.max(axis=axis, keepdims=True)
    with np.errstate(invalid="ignore"):
        e = np.where(valid, np.exp(shifted), 0.0)
    data = e / e.sum(axis=axis, keepdims=True)
    out, record = _result(data, "masked_softmax", (t,))
    if record:
        def backward():
            g = out.grad
            inner = (g * data).sum(axis=axis, keepdims=True)
            _accum(t, np.where(valid, data * (g - inner), 0.0))
        out._backward = backward
    return out


def gather_rows(t: Tensor, index) -> Tensor:
    """Select rows of a tensor along axis 0; index may be any int array."""
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("gather_rows index must be integer")
    if idx.size and (idx.min() < 0 or idx.max() >= t.shape[0]):
        raise ShapeError(f"gather_rows index out of range for first dim {t.shape[0]}")
    out, record = _result(t.data[idx].copy(), "gather_rows", (t,))
    if record:
        def backward():
            g = np.zeros_like(t.data)
            np.add.at(g, idx, out.grad)
            _accum(t, g)
        out._backward = backward
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """2-D convolution, stride 1, zero padding that preserves spatial size.

    x: (rows, cols, in_ch), w: (k, k, in_ch, out_ch) with k odd, b: (out_ch,).
    """
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d input must be rank 3, got {x.shape}")
    if w.data.ndim != 4 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d kernel must be (k, k, in, out), got {w.shape}")
    k = w.shape[0]
    if k % 2 != 1:
        raise ShapeError(f"conv2d kernel size must be odd, got {k}")
    if x.shape[2] != w.shape[2]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    if b.data.ndim != 1 or b.shape[0] != w.shape[3]:
        raise ShapeError(f"conv2d bias shape {b.shape} does not match kernel {w.shape}")
    rows, cols, _ = x.shape
    pad = k // 2
    xpad = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0)))
    data = np.broadcast_to(b.data, (rows, cols, w.shape[3])).copy()
    for di in range(k):
        for dj in range(k):
            window = xpad[di:di + rows, dj:dj + cols, :]
            data += np.tensordot(window, w.data[di, dj], axes=([2], [0]))
    out, record = _result(data, "conv2d", (x, w, b))
    if record:
        def backward():
            g = out.grad
            if b.requires_grad:
                _accum(b, g.sum(axis=(0, 1)))
            if w.requires_grad:
                gw = np.empty_like(w.data)
                for di in range(k):
                    for dj in range(k):
                        window = xpad[di:di + rows, dj:dj + cols, :]
                        gw[di, dj] = np.tensordot(window, g, axes=([0, 1], [0, 1]))
                _accum(w, gw)
            if x.requires_grad:
                gxpad = np.zeros_like(xpad)
                for di in range(k):
                    for dj in range(k):
                        gxpad[di:di + rows, dj:dj + cols, :] += np.tensordot(g, w.data[di, dj], axes=([2], [1]))
                _accum(x, gxpad[pad:pad + rows, pad:pad + cols, :])
        out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable tensor.

    The recorded graph is released afterwards.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()
            node._backward = None
        node._parents = ()
