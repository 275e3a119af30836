"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation produces a new :class:`Tensor` carrying a
:class:`Node` that remembers its operands and a backward rule.  Nodes are
recorded on the active :class:`Tape` (if any); :func:`backward` replays them
in reverse.  Leaf tensors created with ``requires_grad=True`` own a gradient
accumulator that starts at zero and is only ever added to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

FLOAT32 = np.float32
FLOAT64 = np.float64

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass(eq=False)
class Node:
    """One recorded operation: output, operands, and the rule mapping the
    output gradient to one gradient per operand (``None`` = no contribution)."""

    name: str
    output: "Tensor"
    operands: tuple["Tensor", ...]
    backward_fn: BackwardFn


@dataclass(eq=False)
class Tape:
    """Append-only log of operations, in execution (hence topological) order.

    Use as a context manager to record every operation executed inside the
    ``with`` block::

        with Tape() as tape:
            loss = (w * x).sum()
        backward(loss, tape)
    """

    nodes: list[Node] = field(default_factory=list)
    _prev: "Tape | None" = field(default=None, repr=False)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        self._prev = None

    def __len__(self) -> int:
        return len(self.nodes)


_ACTIVE_TAPE: Tape | None = None
_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph construction (inference, optimizer updates)."""

    def __enter__(self) -> None:
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc) -> None:
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


class Tensor:
    """N-dimensional array of f32 or f64 scalars with an optional gradient slot.

    Image tensors use N x C x H x W layout.  The element array is treated as
    immutable by all operations; only optimizers write to it, in place.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if dtype is None and arr.dtype not in (FLOAT32, FLOAT64):
            arr = arr.astype(FLOAT32)
        if arr.dtype not in (FLOAT32, FLOAT64):
            raise TypeError(f"unsupported tensor dtype {arr.dtype}; use float32 or float64")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = np.zeros_like(arr) if self.requires_grad else None
        self.node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.node = None
        t.name = ""
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same elements, no history, no gradient."""
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else FLOAT64), dtype=dtype)


def make_result(name: str, data: np.ndarray, operands: Iterable[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op's output and, when any operand needs gradients, record the node."""
    out = Tensor._wrap(data)
    operands = tuple(operands)
    if _GRAD_ENABLED and any(t.requires_grad for t in operands):
        out.requires_grad = True
        node = Node(name, out, operands, backward_fn)
        out.node = node
        if _ACTIVE_TAPE is not None:
            _ACTIVE_TAPE.record(node)
    return out


def _collect_nodes(loss: Tensor) -> list[Node]:
    """Topologically ordered nodes reachable from ``loss`` (operands first)."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss.node, False)] if loss.node is not None else []
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for op in node.operands:
            if op.node is not None and id(op.node) not in seen:
                stack.append((op.node, False))
    return order


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into every ``requires_grad`` leaf's grad slot.

    With a tape, its nodes are replayed in reverse; without one, the graph
    hanging off ``loss`` is traversed.  Each node is visited exactly once.
    Calling twice without zeroing accumulates twice the gradient.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = tape.nodes if tape is not None else _collect_nodes(loss)
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = loss.grad + np.ones_like(loss.data)
        return

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for operand, og in zip(node.operands, node.backward_fn(g)):
            if og is None or not operand.requires_grad:
                continue
            if operand.node is None:
                operand.grad = operand.grad + og if operand.grad is not None else og.copy()
            else:
                key = id(operand)
                prev = grads.get(key)
                grads[key] = og if prev is None else prev + og


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
