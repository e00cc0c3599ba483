"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations in :mod:`unik.tensor.ops`
record a closure that maps the output gradient to input gradients; calling
:meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order and accumulates gradients into every leaf that requires
them.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence, Tuple

import numpy as np

DEFAULT_DTYPE = np.float32

_state = threading.local()


class DimensionError(ValueError):
    """Operand extents are incompatible."""


class ConfigError(ValueError):
    """Invalid hyperparameter or configuration value."""


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in this thread (inference / frozen backbones)."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        """Wrap an op result, recording the graph edge when any parent needs grads."""
        out = cls(data, dtype=data.dtype)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # -- differentiation ------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf.

        Only scalar roots are allowed. Gradients of leaves accumulate across
        calls; intermediate gradients are discarded after the pass.
        """
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require gradients")

        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise DimensionError(
                        f"internal gradient shape {pg.shape} does not match operand {parent.shape}"
                    )
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar (implemented in ops) -----------------------------------

    def __add__(self, other):
        from unik.tensor import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from unik.tensor import ops

        return ops.add(self, ops.neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        from unik.tensor import ops

        return ops.add(_as_tensor(other, self.dtype), ops.neg(self))

    def __neg__(self):
        from unik.tensor import ops

        return ops.neg(self)

    def __mul__(self, other):
        from unik.tensor import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from unik.tensor import ops

        return ops.matmul(self, other)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root``, each listed before all of its parents."""
    order = []
    visited = set()
    stack = [(root, False)]
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
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def tensor(data, requires_grad: bool = False, dtype=None, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def parameter(data, dtype=None, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)
