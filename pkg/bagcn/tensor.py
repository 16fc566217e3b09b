"""Dense float64 tensors with a dynamic reverse-mode tape.

Every operation returns a new ``Tensor``. When at least one operand requires a
gradient, the result remembers its inputs and a local backward rule; calling
``backward`` on a scalar loss traces those links into a ``ComputationTape`` in
topological order and replays it in reverse.

Only leaf tensors (``Parameter`` objects and inputs created with
``requires_grad=True``) keep a ``grad`` buffer. Gradients accumulate across
``backward`` calls until ``zero_grad`` is called.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ShapeError, ValidationError

_LOGGER = logging.getLogger(__name__)

GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]
Scalar = int | float


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


class Tensor:
    """A read-only float64 array that can take part in differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_op", "_inputs", "_grad_fn")

    def __init__(self, data: Any, requires_grad: bool = False) -> None:
        """Copy ``data`` into a new read-only float64 buffer."""
        self.data: np.ndarray = _frozen(np.array(data, dtype=np.float64))
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._op: str | None = None
        self._inputs: tuple[Tensor, ...] = ()
        self._grad_fn: GradFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def op(self) -> str | None:
        """Name of the operation that produced this tensor, if taped."""
        return self._op

    def numpy(self) -> np.ndarray:
        """Return the (read-only) underlying array."""
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{op})"

    def __add__(self, other: Tensor | Scalar) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Scalar) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor | Scalar) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Scalar) -> Tensor:
        return add(neg(self), other)

    def __mul__(self, other: Tensor | Scalar) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Scalar) -> Tensor:
        return mul(self, other)

    def __truediv__(self, other: Tensor | Scalar) -> Tensor:
        return div(self, other)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        from .ops import matmul

        return matmul(self, other)

    def __getitem__(self, index: Any) -> Tensor:
        return getitem(self, index)


class Parameter(Tensor):
    """A named learnable leaf tensor."""

    __slots__ = ("name", "decay")

    def __init__(self, name: str, data: Any, decay: bool = True) -> None:
        """Create the parameter with a zeroed gradient buffer."""
        super().__init__(data, requires_grad=True)
        self.name = name
        self.decay = decay
        self.grad = np.zeros_like(self.data)

    def assign(self, data: Any) -> None:
        """Replace the value; the shape must not change."""
        value = np.array(data, dtype=np.float64)
        if value.shape != self.data.shape:
            raise ShapeError(
                f"parameter {self.name}: cannot assign shape {value.shape} to {self.data.shape}"
            )
        self.data = _frozen(value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(value: Tensor | Any) -> Tensor:
    """Return ``value`` unchanged if it is a tensor, else a constant tensor."""
    return value if isinstance(value, Tensor) else Tensor(value)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape)))


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor], grad_fn: GradFn) -> Tensor:
    """Wrap an operation result, linking it to its inputs when a gradient is needed.

    ``grad_fn`` receives the gradient of the output and returns one gradient per
    input (``None`` for inputs that take no gradient). This is the single
    extension point for new operations.
    """
    out = Tensor.__new__(Tensor)
    out.data = _frozen(np.asarray(data, dtype=np.float64))
    out.grad = None
    out.requires_grad = False
    out._op = None
    out._inputs = ()
    out._grad_fn = None
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._op = op
        out._inputs = tuple(inputs)
        out._grad_fn = grad_fn
    return out


@dataclass(frozen=True)
class TapeNode:
    """One recorded operation."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    grad_fn: GradFn


@dataclass
class ComputationTape:
    """Recorded operations in topological order (inputs before outputs)."""

    nodes: list[TapeNode]

    @classmethod
    def trace(cls, root: Tensor) -> ComputationTape:
        """Collect every taped operation that ``root`` depends on."""
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited or tensor._grad_fn is None:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            for parent in reversed(tensor._inputs):
                if parent._grad_fn is not None and id(parent) not in visited:
                    stack.append((parent, False))
        return cls([TapeNode(t._op or "", t._inputs, t, t._grad_fn) for t in order])  # type: ignore[arg-type]

    def replay(self, root: Tensor) -> None:
        """Propagate d(root)/d(root) = 1 backwards and accumulate leaf gradients."""
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        leaves: dict[int, Tensor] = {}
        if root._grad_fn is None:
            leaves[id(root)] = root
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(node.inputs, node.grad_fn(upstream), strict=True):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.data.shape:
                    raise ShapeError(
                        f"{node.op}: backward produced {grad.shape} for input {tensor.data.shape}"
                    )
                key = id(tensor)
                if tensor._grad_fn is None:
                    leaves[key] = tensor
                grads[key] = grad if key not in grads else grads[key] + grad
        for key, leaf in leaves.items():
            grad = grads[key]
            leaf.grad = np.array(grad) if leaf.grad is None else leaf.grad + grad


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf reachable from a scalar ``loss``."""
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        _LOGGER.debug("backward called on a loss that depends on no parameter")
        return
    tape = ComputationTape.trace(loss)
    _LOGGER.debug("replaying tape with %d nodes", len(tape.nodes))
    tape.replay(loss)


# Elementwise operations


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


def add(a: Tensor | Scalar, b: Tensor | Scalar) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        return record("add", a.data + float(b), (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return record("add", b.data + float(a), (b,), lambda g: (g,))
    _same_shape("add", a, b)
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor | Scalar) -> Tensor:
    if not isinstance(b, Tensor):
        return record("sub", a.data - float(b), (a,), lambda g: (g,))
    _same_shape("sub", a, b)
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor | Scalar, b: Tensor | Scalar) -> Tensor:
    if not isinstance(b, Tensor):
        a, c = as_tensor(a), float(b)
        return record("mul", a.data * c, (a,), lambda g: (g * c,))
    if not isinstance(a, Tensor):
        c = float(a)
        return record("mul", b.data * c, (b,), lambda g: (g * c,))
    _same_shape("mul", a, b)
    x, y = a.data, b.data
    return record("mul", x * y, (a, b), lambda g: (g * y, g * x))


def div(a: Tensor, b: Tensor | Scalar) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return record("div", a.data / c, (a,), lambda g: (g / c,))
    _same_shape("div", a, b)
    x, y = a.data, b.data
    return record("div", x / y, (a, b), lambda g: (g / y, -g * x / (y * y)))


def neg(a: Tensor) -> Tensor:
    return record("neg", -a.data, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return record("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return record("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


_ELEMENTWISE: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "mul": mul,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def elementwise(op: str, *args: Tensor | Scalar) -> Tensor:
    """Dispatch a pointwise operation by name (add, mul, relu, sigmoid, tanh)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError as err:
        raise ValidationError(f"unknown elementwise op {op!r}") from err
    return fn(*args)


# Reductions


def _normalize_axes(axis: int | Sequence[int] | None, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(sorted(a % ndim for a in axes))


def sum_(a: Tensor, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    shape = a.shape

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        expanded = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(expanded, shape),)

    return record("sum", a.data.sum(axis=axes, keepdims=keepdims), (a,), grad_fn)


def mean(a: Tensor, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    return div(sum_(a, axes, keepdims), float(count))


def max_(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    axis = axis % a.ndim
    index = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, index, axis=axis)
    shape = a.shape

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(shape)
        np.put_along_axis(grad, index, g if keepdims else np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return record("max", out if keepdims else np.squeeze(out, axis), (a,), grad_fn)


# Shape operations


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    source = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as err:
        raise ShapeError(f"reshape: cannot view {source} as {tuple(shape)}") from err
    return record("reshape", out, (a,), lambda g: (g.reshape(source),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return record("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicitly repeat size-1 axes; ranks must already match."""
    shape = tuple(shape)
    if a.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(a.shape, shape, strict=True)):
        raise ShapeError(f"broadcast_to: cannot expand {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape, strict=True)) if s != t)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return record("broadcast", np.broadcast_to(a.data, shape), (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, tensors[0].shape, strict=True)) if i != axis
        ):
            raise ShapeError(
                f"concat: extents other than axis {axis} differ: {tensors[0].shape} vs {t.shape}"
            )
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g: np.ndarray) -> list[np.ndarray]:
        return np.split(g, splits, axis=axis)

    return record(
        "concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), grad_fn
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack: nothing to stack")
    for t in tensors[1:]:
        _same_shape("stack", tensors[0], t)
    out = np.stack([t.data for t in tensors], axis=axis)
    axis = axis % out.ndim

    def grad_fn(g: np.ndarray) -> list[np.ndarray]:
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return record("stack", out, tuple(tensors), grad_fn)


def getitem(a: Tensor, index: Any) -> Tensor:
    """Basic (slice/integer) indexing."""
    shape = a.shape

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(shape)
        grad[index] = g
        return (grad,)

    return record("getitem", a.data[index], (a,), grad_fn)
