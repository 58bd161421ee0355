"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a :class:`Node` holding the parents and a closure that maps
the output gradient onto parent gradients. :meth:`Tensor.backward` walks the
recorded graph in reverse topological order and accumulates gradients into
the leaf tensors.
"""

from __future__ import annotations

import os
import threading
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from .errors import GraphError, NumericalError, ShapeError

DEFAULT_DTYPE = np.float32

# Set MFHCA_DEBUG=1 to check every operation result for NaN/Inf.
DEBUG_FINITE = os.environ.get("MFHCA_DEBUG", "") not in ("", "0")

_state = threading.local()

ArrayLike = Union["Tensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Union[np.ndarray, "SliceGrad", None]]]


def is_grad_enabled() -> bool:
    """Whether operations on this thread record graph nodes."""
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@dataclass
class SliceGrad:
    """Gradient that is non-zero only on ``index`` of a parent of ``shape``."""

    index: Any
    value: np.ndarray
    shape: tuple[int, ...]


@dataclass
class Node:
    """Record of one operation: its kind, inputs and backward closure."""

    op: str
    parents: tuple[Tensor, ...]
    backward_fn: BackwardFn | None
    released: bool = False

    def release(self) -> None:
        # Drops saved activations held by the closure.
        self.backward_fn = None
        self.released = True


class Tensor:
    """N-dimensional array with an optional gradient slot."""

    __array_priority__ = 1000

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Any = None,
        name: str | None = None,
    ) -> None:
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(array.dtype, np.floating):
            array = array.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: Node | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        op = self._node.op if self._node else "leaf"
        return (
            f"Tensor(shape={self.shape}, dtype={self.dtype}, op={op}, "
            f"requires_grad={self.requires_grad})"
        )

    def __len__(self) -> int:
        return self.shape[0]

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other: ArrayLike) -> Tensor:
        other = as_tensor(other, like=self)
        return make_result(
            self.data + other.data,
            (self, other),
            "add",
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
        )

    def __radd__(self, other: ArrayLike) -> Tensor:
        return as_tensor(other, like=self) + self

    def __sub__(self, other: ArrayLike) -> Tensor:
        other = as_tensor(other, like=self)
        return make_result(
            self.data - other.data,
            (self, other),
            "sub",
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)),
        )

    def __rsub__(self, other: ArrayLike) -> Tensor:
        return as_tensor(other, like=self) - self

    def __mul__(self, other: ArrayLike) -> Tensor:
        other = as_tensor(other, like=self)
        a, b = self.data, other.data
        return make_result(
            a * b,
            (self, other),
            "mul",
            lambda g: (_unbroadcast(g * b, self.shape), _unbroadcast(g * a, other.shape)),
        )

    def __rmul__(self, other: ArrayLike) -> Tensor:
        return as_tensor(other, like=self) * self

    def __truediv__(self, other: ArrayLike) -> Tensor:
        other = as_tensor(other, like=self)
        a, b = self.data, other.data
        return make_result(
            a / b,
            (self, other),
            "div",
            lambda g: (
                _unbroadcast(g / b, self.shape),
                _unbroadcast(-g * a / (b * b), other.shape),
            ),
        )

    def __rtruediv__(self, other: ArrayLike) -> Tensor:
        return as_tensor(other, like=self) / self

    def __neg__(self) -> Tensor:
        return make_result(-self.data, (self,), "neg", lambda g: (-g,))

    def __pow__(self, exponent: float) -> Tensor:
        a = self.data
        return make_result(
            a**exponent,
            (self,),
            "pow",
            lambda g: (g * exponent * a ** (exponent - 1),),
        )

    def __matmul__(self, other: Tensor) -> Tensor:
        from .ops import matmul

        return matmul(self, other)

    def __getitem__(self, index: Any) -> Tensor:
        shape = self.shape
        return make_result(
            self.data[index],
            (self,),
            "getitem",
            lambda g: (SliceGrad(index, g, shape),),
        )

    # -- reductions and shape ------------------------------------------

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        shape = self.shape

        def backward(g: np.ndarray) -> tuple[np.ndarray]:
            if not keepdims and axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return make_result(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", backward)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: int) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return make_result(
            self.data.reshape(shape), (self,), "reshape", lambda g: (g.reshape(original),)
        )

    def transpose(self, *axes: int) -> Tensor:
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return make_result(
            self.data.transpose(axes), (self,), "transpose", lambda g: (g.transpose(inverse),)
        )

    @property
    def T(self) -> Tensor:  # noqa: N802
        return self.transpose()

    def swapaxes(self, a: int, b: int) -> Tensor:
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(*axes)

    # -- elementwise functions -----------------------------------------

    def exp(self) -> Tensor:
        out = np.exp(self.data)
        return make_result(out, (self,), "exp", lambda g: (g * out,))

    def log(self) -> Tensor:
        a = self.data
        return make_result(np.log(a), (self,), "log", lambda g: (g / a,))

    def tanh(self) -> Tensor:
        out = np.tanh(self.data)
        return make_result(out, (self,), "tanh", lambda g: (g * (1.0 - out * out),))

    def sigmoid(self) -> Tensor:
        from .ops import sigmoid

        return sigmoid(self)

    def relu(self) -> Tensor:
        from .ops import relu

        return relu(self)

    # -- differentiation -----------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        Graph(self).backward()


class Parameter(Tensor):
    """A learnable leaf tensor."""

    def __init__(self, data: ArrayLike, dtype: Any = None, name: str | None = None) -> None:
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)


def as_tensor(value: ArrayLike, like: Tensor | None = None) -> Tensor:
    """Wrap ``value`` as a constant tensor matching the dtype of ``like``."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def make_result(
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    op: str,
    backward_fn: BackwardFn,
) -> Tensor:
    """Create an operation output, recording a node when gradients are needed."""
    if DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise NumericalError(f"{op} produced non-finite values")
    out = Tensor(data, dtype=data.dtype)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = Node(op, parents, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


@dataclass
class Graph:
    """Topologically ordered view of the operations that produced ``root``."""

    root: Tensor
    nodes: list[Tensor] = field(init=False)

    def __post_init__(self) -> None:
        self.nodes = _topological_order(self.root)

    def backward(self) -> None:
        root = self.root
        if root.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {root.shape}")
        if root._node is not None and root._node.released:
            raise GraphError("backward called twice on the same graph; re-run the forward pass")
        if not root.requires_grad:
            raise GraphError("loss does not depend on any tensor requiring gradients")

        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        owned: set[int] = set()
        for tensor in reversed(self.nodes):
            key = id(tensor)
            grad = grads.pop(key, None)
            owned.discard(key)
            node = tensor._node
            if node is None:
                if grad is not None and tensor.requires_grad:
                    grad = np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape)
                    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
                continue
            if grad is not None and node.released:
                raise GraphError(
                    f"gradient reached a {node.op} node whose graph was already "
                    "backpropagated; re-run the forward pass"
                )
            if grad is not None and node.backward_fn is not None:
                parent_grads = node.backward_fn(grad)
                for parent, parent_grad in zip(node.parents, parent_grads):
                    if parent_grad is None or not parent.requires_grad:
                        continue
                    _accumulate(grads, owned, parent, parent_grad)
            node.release()


def _accumulate(
    grads: dict[int, np.ndarray],
    owned: set[int],
    parent: Tensor,
    grad: np.ndarray | SliceGrad,
) -> None:
    key = id(parent)
    if isinstance(grad, SliceGrad):
        buffer = grads.get(key)
        if buffer is None:
            buffer = np.zeros(grad.shape, dtype=parent.dtype)
        elif key not in owned:
            buffer = np.array(buffer, dtype=parent.dtype)
        if _is_basic_index(grad.index):
            buffer[grad.index] += grad.value
        else:
            np.add.at(buffer, grad.index, grad.value)
        grads[key] = buffer
        owned.add(key)
    elif key in grads:
        grads[key] = grads[key] + grad
        owned.add(key)
    else:
        grads[key] = grad


def _topological_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; parents precede children in the result."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor._node is not None:
            for parent in tensor._node.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def _is_basic_index(index: Any) -> bool:
    """True for indices made of ints and slices, which never repeat an element."""
    items = index if isinstance(index, tuple) else (index,)
    return all(
        item is Ellipsis or item is None or isinstance(item, (int, np.integer, slice))
        for item in items
    )
