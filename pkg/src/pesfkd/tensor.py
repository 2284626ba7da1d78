"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every differentiable operation returns a new :class:`Tensor` that remembers its
parents and a closure mapping the upstream gradient to one gradient per parent.
:meth:`Tensor.backward` sorts the recorded graph topologically and walks it once
in reverse, *accumulating* into ``.grad`` until :meth:`Tensor.zero_grad` is
called.

Broadcasting is deliberately narrow: binary ops accept equal shapes or a scalar
operand. Anything else has to go through :func:`expand`, which makes the
broadcast explicit and gives it a backward rule.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

_PRECISIONS = {"f32": np.float32, "f64": np.float64}
_state = {"dtype": np.float64, "grad_enabled": True}

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def get_precision() -> str:
    return "f32" if _state["dtype"] is np.float32 else "f64"


def set_precision(name: str) -> None:
    """Select the global floating point precision ('f32' or 'f64')."""
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _state["dtype"] = _PRECISIONS[name]


def default_dtype() -> type:
    return _state["dtype"]


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    previous = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording the graph."""
    previous = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = previous


class Tensor:
    """Dense row-major array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or default_dtype())
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @classmethod
    def _result(cls, data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        needs = _state["grad_enabled"] and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = parents if needs else ()
        out._backward = backward if needs else None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autodiff ------------------------------------------------------
    def detach(self) -> Tensor:
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.op = "detach"
        out._parents = ()
        out._backward = None
        return out

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def backward(self) -> None:
        """Populate ``.grad`` of every tensor on the graph that requires it."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # -- operator sugar ------------------------------------------------
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# -- linear algebra --------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.data, b.data

    def backward(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return Tensor._result(av @ bv, "matmul", (a, b), backward)


# -- elementwise -----------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._result(np.where(mask, a.data, 0).astype(a.dtype), "relu", (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = a.data
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    out = 0.5 * x * (1 + t)

    def backward(g):
        dt = (1 - t * t) * _GELU_C * (1 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1 + t) + 0.5 * x * dt),)

    return Tensor._result(out, "gelu", (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._result(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    x = a.data
    return Tensor._result(np.log(x), "log", (a,), lambda g: (g / x,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); the gradient is zero where the floor is active."""
    mask = a.data >= floor
    out = np.where(mask, a.data, a.dtype.type(floor))
    return Tensor._result(out, "clamp_min", (a,), lambda g: (g * mask,))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return Tensor._result(a.data * a.dtype.type(factor), "scale", (a,), lambda g: (g * factor,))


def _binary_operands(a, b, op: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ; use expand() to broadcast")
    return a, b


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    return Tensor._result(a.data + b.data, "add", (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    return Tensor._result(a.data - b.data, "sub", (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")
    av, bv = a.data, b.data

    def backward(g):
        return (
            _reduce_to(g * bv, a.shape) if a.requires_grad else None,
            _reduce_to(g * av, b.shape) if b.requires_grad else None,
        )

    return Tensor._result(av * bv, "mul", (a, b), backward)


_UNARY = {"relu": relu, "gelu": gelu, "exp": exp, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(a: Tensor, kind: str, other=None) -> Tensor:
    """Dispatch by name: unary kinds ignore ``other``; ``scale`` takes a float."""
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind in _BINARY:
        return _BINARY[kind](a, other)
    if kind == "scale":
        return scale(a, other)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def activation(name: str) -> Callable[[Tensor], Tensor]:
    if name not in ("relu", "gelu"):
        raise ValueError(f"unsupported activation {name!r}")
    return _UNARY[name]


# -- shape ---------------------------------------------------------------

def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of ``a`` to ``shape`` (numpy rules); backward sums."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"cannot expand {a.shape} to {shape}") from None
    src = a.shape

    def backward(g):
        lead = g.ndim - len(src)
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return Tensor._result(np.ascontiguousarray(out), "expand", (a,), backward)


# -- reductions ------------------------------------------------------------

def _check_axis(a: Tensor, axis):
    if axis is not None and not -a.data.ndim <= axis < a.data.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {a.shape}")


def _regrow(g: np.ndarray, a: Tensor, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.asarray(g).reshape(()), a.shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, a.shape)


def reduce(a: Tensor, kind: str, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Reduce along ``axis`` (all axes when None) with sum, mean, max or logsumexp."""
    _check_axis(a, axis)
    x = a.data
    if kind == "sum":
        out = x.sum(axis=axis, keepdims=keepdims)
        return Tensor._result(np.asarray(out), "sum", (a,), lambda g: (_regrow(g, a, axis, keepdims),))
    if kind == "mean":
        count = x.size if axis is None else x.shape[axis]
        out = x.mean(axis=axis, keepdims=keepdims)
        return Tensor._result(np.asarray(out), "mean", (a,), lambda g: (_regrow(g, a, axis, keepdims) / count,))
    if kind == "max":
        out = x.max(axis=axis, keepdims=keepdims)
        if axis is None:
            mask = np.zeros(x.size, dtype=x.dtype)
            mask[np.argmax(x)] = 1
            mask = mask.reshape(x.shape)
        else:
            idx = np.expand_dims(np.argmax(x, axis=axis), axis)
            mask = np.zeros_like(x)
            np.put_along_axis(mask, idx, 1, axis=axis)
        return Tensor._result(np.asarray(out), "max", (a,), lambda g: (_regrow(g, a, axis, keepdims) * mask,))
    if kind == "logsumexp":
        m = x.max(axis=axis, keepdims=True)
        shifted = np.exp(x - m)
        total = shifted.sum(axis=axis, keepdims=True)
        out_keep = m + np.log(total)
        soft = shifted / total
        out = out_keep if keepdims else (out_keep.reshape(()) if axis is None else np.squeeze(out_keep, axis))
        return Tensor._result(np.asarray(out), "logsumexp", (a,), lambda g: (_regrow(g, a, axis, keepdims) * soft,))
    raise ValueError(f"unknown reduction {kind!r}")


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return reduce(a, "sum", axis, keepdims)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return reduce(a, "mean", axis, keepdims)


def logsumexp(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return reduce(a, "logsumexp", axis, keepdims)


def log_softmax(z: Tensor, axis: int = 1) -> Tensor:
    # Shift by the (constant) row max first so both terms stay small; this keeps
    # single-precision rounding at the level of the probabilities, not of |z|.
    _check_axis(z, axis)
    shift = Tensor(z.data.max(axis=axis, keepdims=True), dtype=z.dtype)
    shifted = sub(z, expand(shift, z.shape))
    return sub(shifted, expand(logsumexp(shifted, axis=axis, keepdims=True), z.shape))


def softmax(z: Tensor, axis: int = 1) -> Tensor:
    return exp(log_softmax(z, axis))
