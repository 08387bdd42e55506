"""Dense float64 tensor with reverse-mode automatic differentiation.

Every differentiable operation returns a new ``Tensor`` that remembers its
parents and a closure mapping the output gradient to parent gradients. Calling
:meth:`Tensor.backward` on a scalar walks that graph once in reverse
topological order. The graph is released afterwards; a second ``backward`` on
the same root raises :class:`~anfr.errors.GraphError`.

Leaf tensors (those created directly with ``requires_grad=True``) accumulate
into ``.grad`` across separate graphs, so optimizers must call
:meth:`Tensor.zero_grad` between steps.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import GraphError, ShapeError

MAX_RANK = 4

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeError("Tensor", arr.shape, detail=f"rank must be <= {MAX_RANK}")
        if any(d < 1 for d in arr.shape):
            raise ShapeError("Tensor", arr.shape, detail="all extents must be >= 1")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._consumed = False

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._consumed = False
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        if data.ndim > MAX_RANK:
            raise ShapeError("Tensor", data.shape, detail=f"rank must be <= {MAX_RANK}")
        return out

    # -- basic properties -----------------------------------------------------

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
    def is_leaf(self) -> bool:
        return self._backward is None and not self._consumed

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, detail="only single-element tensors")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    # -- operator sugar (delegates to ops) ------------------------------------

    def __add__(self, other):
        from . import ops
        return ops.add(self, _as_tensor(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _as_tensor(other, self.shape))

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, 1.0 / float(other))
        return NotImplemented

    # -- reverse mode ---------------------------------------------------------

    def backward(self) -> None:
        backward(self)


def _as_tensor(value, shape) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.broadcast_to(np.asarray(value, dtype=np.float64), shape))


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


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every leaf that ``root`` depends on.

    Shared subexpressions are visited once with their gradients summed, so
    ``backward(x + x)`` leaves ``x.grad == 2``.
    """
    if root.data.size != 1:
        raise GraphError(f"backward requires a scalar root, got shape {root.shape}")
    if root._consumed:
        raise GraphError("backward was already called on this graph")
    if not root.requires_grad:
        raise GraphError("root does not depend on any tensor with requires_grad=True")

    order = _topological_order(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is None:
                continue
            if node._consumed:
                raise GraphError("graph segment was consumed by an earlier backward call")
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is not None:
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise ShapeError("backward", pg.shape, parent.data.shape,
                                     detail="gradient shape mismatch")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        node._backward = None
        node._parents = ()
        node._consumed = True


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)
