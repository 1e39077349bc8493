"""Dense float64 tensors with a small reverse-mode autodiff tape.

Every op returns a new :class:`Tensor` holding references to its parents and a
backward rule. :func:`backward` walks the graph in reverse topological order
and accumulates adjoints into a fresh map, so running it twice on the same
graph gives the same answer.

Broadcasting is limited to what the network layers need: numpy broadcasting
for elementwise ops and leading batch dimensions for ``matmul``.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "sum",
    "mean",
    "transpose",
    "relu",
    "sigmoid",
    "hardswish",
    "activations",
    "softmax_rows",
    "log",
    "clamp",
    "backward",
]

BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class Tensor:
    """A float64 array that can take part in a gradient graph."""

    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward_rule: Optional[BackwardRule] = None,
        name: Optional[str] = None,
    ):
        self.data = np.array(data, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward_rule = backward_rule
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in self.parents)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from None

    def rule(g):
        da = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        db = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return da, db

    return Tensor(out, parents=(a, b), backward_rule=rule)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, parents=(a, b), backward_rule=rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.data - b.data, parents=(a, b), backward_rule=rule)


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, parents=(a, b), backward_rule=rule)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.data, parents=(a,), backward_rule=lambda g: (-g,))


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, parents=(a,), backward_rule=rule)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return Tensor(out, parents=(a,), backward_rule=rule)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose needs rank >= 2, got {a.shape}")
    return Tensor(
        np.swapaxes(a.data, -1, -2),
        parents=(a,),
        backward_rule=lambda g: (np.swapaxes(g, -1, -2),),
    )


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0.0), parents=(a,), backward_rule=lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return Tensor(s, parents=(a,), backward_rule=lambda g: (g * s * (1.0 - s),))


def hardswish(a) -> Tensor:
    """``x * clamp(x + 3, 0, 6) / 6``; derivative at the kinks taken from the right."""
    a = as_tensor(a)
    x = a.data
    out = x * np.clip(x + 3.0, 0.0, 6.0) / 6.0
    # right-hand derivative: 0 on x < -3, (2x + 3) / 6 on [-3, 3), 1 on x >= 3
    deriv = np.where(x < -3.0, 0.0, np.where(x < 3.0, (2.0 * x + 3.0) / 6.0, 1.0))
    return Tensor(out, parents=(a,), backward_rule=lambda g: (g * deriv,))


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "hardswish": hardswish}


def activations(a, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(a)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, stabilized by subtracting the row max."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor(s, parents=(a,), backward_rule=rule)


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.log(a.data), parents=(a,), backward_rule=lambda g: (g / a.data,))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip values to ``[lo, hi]``; gradient is zero where clipping happened."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor(
        np.clip(a.data, lo, hi), parents=(a,), backward_rule=lambda g: (g * inside,)
    )


def _topological_order(root: Tensor) -> list:
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
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> Dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar ``root``.

    Returns a map from every requires-grad leaf to its adjoint; the same arrays
    are also stored on ``leaf.grad`` (overwritten, not accumulated).
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    adjoints: Dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    result: Dict[Tensor, np.ndarray] = {}
    for node in reversed(_topological_order(root)):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                result[node] = g
            continue
        for parent, pg in zip(node.parents, node.backward_rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoints:
                adjoints[key] = adjoints[key] + pg
            else:
                adjoints[key] = pg
    for leaf, g in result.items():
        leaf.grad = g
    return result


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.isfinite(p.data).all() for p in params)
