"""Dense numpy-backed tensors with reverse-mode automatic differentiation.

Only what MLP training and input-gradient attacks need is provided. There is
no implicit broadcasting except between a tensor and a scalar; adding a bias
row to a batch goes through the explicit :func:`add_bias` op.

Conventions
-----------
* float64 by default; :func:`set_default_dtype` switches to float32 for speed.
* ``relu'(0) = 0``.
* Non-finite values raise :class:`NonFiniteError`. Softmax and cross-entropy
  always check their inputs; every other op checks only in debug mode
  (:func:`debug_mode`).
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

Scalar = Union[int, float]

_state = threading.local()


class NonFiniteError(FloatingPointError):
    """A NaN or Inf reached an op boundary."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def _cfg(name, default):
    return getattr(_state, name, default)


def get_default_dtype():
    return _cfg("dtype", np.float64)


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _state.dtype = dtype.type


def is_debug() -> bool:
    return _cfg("debug", False)


def set_debug(enabled: bool) -> None:
    _state.debug = bool(enabled)


@contextlib.contextmanager
def debug_mode(enabled: bool = True) -> Iterator[None]:
    """Temporarily enable finiteness checks at every op boundary."""
    prev = is_debug()
    set_debug(enabled)
    try:
        yield
    finally:
        set_debug(prev)


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value in {where}")


class Tensor:
    """N-d array plus the bookkeeping needed to backpropagate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or get_default_dtype())
        if is_debug():
            _check_finite(arr, "tensor construction")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{rg})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    if is_debug():
        _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = parents if out.requires_grad else ()
    out._backward = backward_fn if out.requires_grad else None
    out.op = op
    return out


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) or (
        isinstance(x, Tensor) and x.ndim == 0
    )


def _binary_operands(a, b, op: str):
    a_scalar, b_scalar = _is_scalar(a), _is_scalar(b)
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and not (a_scalar or b_scalar):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")
    return a, b


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # only scalar-vs-tensor broadcasting exists, so reduction is all-or-nothing
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
        "mul",
    )


def scale(a: Tensor, c: Scalar) -> Tensor:
    """Multiply by a constant (not tracked)."""
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    out = np.asarray(a.data.sum(axis=axis))

    def _bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(out, (a,), _bw, "sum")


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add the vector ``b`` to every row of the matrix ``x``."""
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: {x.shape} and {b.shape}")
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")


def take_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of the last axis."""
    k = a.shape[-1]
    if not 0 <= start < stop <= k:
        raise ShapeError(f"take_cols: bad range [{start}, {stop}) for width {k}")

    def _bw(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        return (full,)

    return _make(a.data[..., start:stop], (a,), _bw, "take_cols")


def _softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_stable(logits: Tensor) -> Tensor:
    """Softmax over the last axis, computed after subtracting the row max."""
    _check_finite(logits.data, "softmax input")
    if logits.shape[-1] < 1:
        raise ShapeError("softmax over an empty axis")
    p = _softmax_np(logits.data)

    def _bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (logits,), _bw, "softmax")


def log_softmax(logits: Tensor) -> Tensor:
    _check_finite(logits.data, "log_softmax input")
    lp = _log_softmax_np(logits.data)

    def _bw(g):
        return (g - np.exp(lp) * g.sum(axis=-1, keepdims=True),)

    return _make(lp, (logits,), _bw, "log_softmax")


def cross_entropy(logits: Tensor, target, reduction: str = "mean") -> Tensor:
    """Soft-target cross-entropy ``-sum_k target_k * log softmax(logits)_k``.

    ``target`` is a plain array of probability rows (B x K). ``reduction`` is
    ``"mean"`` (over the batch), ``"sum"`` or ``"none"`` (per-sample vector).
    """
    target = np.asarray(target, dtype=logits.data.dtype)
    if logits.ndim != 2 or target.shape != logits.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs target {target.shape}")
    if np.any(target < 0) or np.any(np.abs(target.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("cross_entropy: every target row must be a probability distribution")
    _check_finite(logits.data, "cross_entropy input")
    lp = _log_softmax_np(logits.data)
    per_sample = -(target * lp).sum(axis=1)
    p = np.exp(lp)
    b = logits.shape[0]

    if reduction == "none":
        return _make(per_sample, (logits,), lambda g: ((p - target) * g[:, None],), "cross_entropy")
    if reduction == "sum":
        return _make(np.asarray(per_sample.sum()), (logits,), lambda g: ((p - target) * g,), "cross_entropy")
    if reduction == "mean":
        return _make(
            np.asarray(per_sample.mean()), (logits,), lambda g: ((p - target) * (g / b),), "cross_entropy"
        )
    raise ValueError(f"unknown reduction {reduction!r}")


def one_hot(labels, k: int, dtype=None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], k), dtype=dtype or get_default_dtype())
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf."""
    if loss.size != 1 or loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
