"""Differentiable forward ops.

Per-vertex features are laid out as ``(batch, vertices, channels)``. Sparse
operators act on the vertex axis and are passed as plain ``scipy.sparse``
matrices; they are constants of the graph and never receive gradients.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .tensor import Tensor, make_node

LRELU_SLOPE = 0.1


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return make_node(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    return make_node(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, w: Tensor) -> Tensor:
    """``a @ w`` where ``a`` is ``(..., n)`` and ``w`` is ``(n, m)``."""
    if w.data.ndim != 2 or a.shape[-1] != w.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {w.shape}")

    def bw(g):
        ga = g @ w.data.T
        gw = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gw

    return make_node(a.data @ w.data, (a, w), bw)


def _vertex_apply(m: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    b, v, c = x.shape
    flat = np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(v, b * c)
    out = m @ flat
    return np.ascontiguousarray(out.reshape(m.shape[0], b, c).transpose(1, 0, 2))


_transposes: dict[int, tuple[sp.spmatrix, sp.spmatrix]] = {}


def _transpose(m: sp.spmatrix) -> sp.spmatrix:
    # keyed by id; the entry keeps ``m`` alive so the id cannot be recycled
    hit = _transposes.get(id(m))
    if hit is None or hit[0] is not m:
        hit = (m, m.T.tocsr())
        _transposes[id(m)] = hit
    return hit[1]


def sparse_dense_matmul(m: sp.spmatrix, x: Tensor) -> Tensor:
    """Apply a sparse ``(rows, vertices)`` operator along the vertex axis of ``(B, V, C)``."""
    if x.data.ndim != 3 or m.shape[1] != x.shape[1]:
        raise ValueError(f"sparse operator {m.shape} incompatible with features {x.shape}")
    mt = _transpose(m)
    return make_node(_vertex_apply(m, x.data), (x,), lambda g: (_vertex_apply(mt, g),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    arrays = [t.data for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(out, tensors, bw)


def tile_broadcast(x: Tensor, n_vertices: int) -> Tensor:
    """Repeat a per-sample ``(B, C)`` vector onto every vertex: ``(B, V, C)``."""
    if x.data.ndim != 2:
        raise ValueError(f"tile_broadcast expects (B, C), got {x.shape}")
    out = np.repeat(x.data[:, None, :], n_vertices, axis=1)
    return make_node(out, (x,), lambda g: (g.sum(axis=1),))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def leaky_relu(x: Tensor, slope: float = LRELU_SLOPE) -> Tensor:
    d = np.where(x.data > 0, 1.0, slope)
    return make_node(x.data * d, (x,), lambda g: (g * d,))


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),))


def log(x: Tensor) -> Tensor:
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return make_node(e, (x,), lambda g: (g * e,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return make_node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def square(x: Tensor) -> Tensor:
    return make_node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    shape = x.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return make_node(np.sum(x.data, axis=axis), (x,), bw)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis), 1.0 / float(n))


def per_row_l2_norm(x: Tensor) -> Tensor:
    """Euclidean norm over the last axis. The subgradient at a zero row is zero."""
    n = np.sqrt(np.sum(x.data * x.data, axis=-1))
    safe = np.where(n > 0, n, 1.0)

    def bw(g):
        return (np.where(n[..., None] > 0, x.data / safe[..., None], 0.0) * g[..., None],)

    return make_node(n, (x,), bw)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Group normalization of ``(B, V, C)`` over vertices and the channels of each group."""
    b, v, c = x.shape
    if c % groups:
        raise ValueError(f"{groups} groups do not divide {c} channels")
    cg = c // groups
    m = v * cg

    def per_channel(per_group: np.ndarray) -> np.ndarray:
        return np.repeat(per_group, cg, axis=1)[:, None, :]

    def group_sum(per_chan: np.ndarray) -> np.ndarray:
        return per_chan.reshape(b, groups, cg).sum(-1)

    # channel sums over the contiguous vertex axis first, then fold channels into groups
    mu = group_sum(x.data.sum(axis=1)) / m
    xc = x.data - per_channel(mu)
    var = group_sum((xc * xc).sum(axis=1)) / m
    inv = per_channel(1.0 / np.sqrt(var + eps))
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        ggamma = (g * xhat).sum(axis=(0, 1))
        gbeta = g.sum(axis=(0, 1))
        gxh = g * gamma.data
        s1 = per_channel(group_sum(gxh.sum(axis=1)))
        s2 = per_channel(group_sum((gxh * xhat).sum(axis=1)))
        gx = (inv / m) * (m * gxh - s1 - xhat * s2)
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), bw)
