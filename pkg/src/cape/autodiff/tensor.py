"""Reverse-mode tensor with an implicit creation-ordered tape.

Every op output gets a monotonically increasing sequence id. Creation order is
a valid topological order of the graph, so ``backward`` collects the nodes
reachable from the loss and replays them in descending id order.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_seq = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Ops inside the block record no backward graph."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array with an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_seq)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar delegates to the functional ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _lift(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_lift(other), self)

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, _lift(other))

    def backward(self) -> None:
        backward(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(
    data: np.ndarray,
    parents: Iterable[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap an op result; the closure maps the output grad to one grad per parent."""
    parents = tuple(parents)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor with ``requires_grad`` reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` buffers, so call
    ``zero_grad`` on parameters between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in nodes:
            continue
        nodes[t._id] = t
        stack.extend(p for p in t._parents if p.requires_grad and p._id not in nodes)

    # interior buffers are local to this pass; leaves accumulate into .grad
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for tid in sorted(nodes, reverse=True):
        t = nodes[tid]
        g = grads.pop(tid, None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.data.shape:
                raise RuntimeError(
                    f"gradient shape {pg.shape} does not match tensor shape {p.data.shape}"
                )
            if p._id in grads:
                grads[p._id] = grads[p._id] + pg
            else:
                grads[p._id] = pg


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
