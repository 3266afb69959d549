"""
Dense tensor with reverse-mode automatic differentiation.

A Tensor wraps a row-major NumPy array. Operations record their parents and a
closure mapping the output gradient to one gradient per parent. Calling
``backward()`` on a result walks the recorded graph in reverse topological
order and accumulates ``.grad`` on every reachable tensor that requires it.

Precision is global: training runs in float32, gradient verification switches
to float64 with ``precision(np.float64)``.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Any, Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import GraphError, ShapeError

Array = np.ndarray
BackwardFn = Callable[[Array], Sequence[Optional[Array]]]

_DTYPE = {"value": np.dtype(np.float32)}
_grad_mode = threading.local()


def get_dtype() -> np.dtype:
    return _DTYPE["value"]


def set_precision(dtype: Union[str, type, np.dtype]) -> None:
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {dt}; use float32 or float64")
    _DTYPE["value"] = dt


@contextlib.contextmanager
def precision(dtype: Union[str, type, np.dtype]) -> Iterator[None]:
    """Temporarily switch the working precision (float64 for verification)."""
    previous = _DTYPE["value"]
    set_precision(dtype)
    try:
        yield
    finally:
        _DTYPE["value"] = previous


def is_grad_enabled() -> bool:
    return getattr(_grad_mode, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Results computed inside carry no graph (stop-gradient for whole passes)."""
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


def unbroadcast(grad: Array, shape: Tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape``, undoing NumPy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """n-dimensional value with an optional gradient-tracking node."""

    __array_priority__ = 100.0

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None):
        self.data: Array = np.ascontiguousarray(data, dtype=get_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self.name = name
        self.op: Optional[str] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._backward_done = False

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: Array, parents: Sequence["Tensor"], backward: BackwardFn,
                 op: str) -> "Tensor":
        out = cls(data)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        out.op = op
        return out

    @staticmethod
    def lift(value: Any) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    # -- properties -----------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{req}{nm})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- graph ----------------------------------------------------------------

    def detach(self) -> "Tensor":
        """Value-equal tensor cut from the graph."""
        out = Tensor(self.data.copy())
        out.op = "detach"
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
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
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad: Optional[Any] = None) -> None:
        """Accumulate gradients into every reachable tensor that requires them."""
        if self._backward_done:
            raise GraphError("backward() called twice on the same graph; run a fresh forward pass")
        if grad is None:
            if self.size != 1:
                raise GraphError(f"backward() on a non-scalar of shape {self.shape} needs an explicit grad")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(grad, dtype=self.data.dtype)
            if seed.shape != self.shape:
                raise ShapeError("backward", self.shape, seed.shape)
        self._backward_done = True
        if not self.requires_grad:
            return

        order = self._topological_order()
        pending = {id(self): seed}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pg = unbroadcast(np.asarray(pg, dtype=parent.data.dtype), parent.shape)
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg
        # leaves cut off by every path still report a (zero) gradient
        for node in order:
            if node.is_leaf and node.requires_grad and node.grad is None:
                node.grad = np.zeros_like(node.data)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other: Any) -> "Tensor":
        other = Tensor.lift(other)
        return Tensor._from_op(self.data + other.data, (self, other),
                               lambda g: (g, g), "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other: Any) -> "Tensor":
        other = Tensor.lift(other)
        return Tensor._from_op(self.data - other.data, (self, other),
                               lambda g: (g, -g), "sub")

    def __rsub__(self, other: Any) -> "Tensor":
        return Tensor.lift(other).__sub__(self)

    def __mul__(self, other: Any) -> "Tensor":
        other = Tensor.lift(other)
        a, b = self.data, other.data
        return Tensor._from_op(a * b, (self, other), lambda g: (g * b, g * a), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "Tensor":
        other = Tensor.lift(other)
        a, b = self.data, other.data
        return Tensor._from_op(a / b, (self, other),
                               lambda g: (g / b, -g * a / (b * b)), "div")

    def __rtruediv__(self, other: Any) -> "Tensor":
        return Tensor.lift(other).__truediv__(self)

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.data
        return Tensor._from_op(a ** exponent, (self,),
                               lambda g: (g * exponent * a ** (exponent - 1),), "pow")

    def __matmul__(self, other: Any) -> "Tensor":
        other = Tensor.lift(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError("matmul", a.shape, b.shape)

        def backward(g: Array):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return ga, gb

        return Tensor._from_op(a @ b, (self, other), backward, "matmul")

    # -- shape ----------------------------------------------------------------

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError as exc:
            raise ShapeError("reshape", src, shape) from exc
        return Tensor._from_op(out, (self,), lambda g: (g.reshape(src),), "reshape")

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._from_op(np.transpose(self.data, axes), (self,),
                               lambda g: (np.transpose(g, inverse),), "transpose")

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def __getitem__(self, index: Any) -> "Tensor":
        src_shape = self.shape
        dtype = self.data.dtype

        def backward(g: Array):
            full = np.zeros(src_shape, dtype=dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._from_op(self.data[index], (self,), backward, "slice")

    # -- reductions -----------------------------------------------------------

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        src_shape = self.shape

        def backward(g: Array):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src_shape),)

        return Tensor._from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum")

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

