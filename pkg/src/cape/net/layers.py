"""Graph layers built from autodiff ops. Features are ``(batch, vertices, channels)``."""
from __future__ import annotations

import math
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from ..autodiff import Tensor, ops, parameter


def gn_groups(channels: int, cap: int = 32) -> int:
    """Largest divisor of ``channels`` not exceeding ``cap``."""
    for g in range(min(cap, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


class ParamStore:
    """Ordered name -> parameter tensor map with fan-in scaled initialisation."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, Tensor] = {}

    def weight(self, name: str, fan_in: int, fan_out: int, zero: bool = False) -> Tensor:
        # uniform(-a, a) with a = sqrt(6 / fan_in) has std sqrt(2 / fan_in)
        if zero:
            data = np.zeros((fan_in, fan_out))
        else:
            a = math.sqrt(6.0 / fan_in)
            data = self.rng.uniform(-a, a, size=(fan_in, fan_out))
        return self._add(name, data)

    def zeros(self, name: str, *shape: int) -> Tensor:
        return self._add(name, np.zeros(shape))

    def ones(self, name: str, *shape: int) -> Tensor:
        return self._add(name, np.ones(shape))

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = parameter(data, name=name)
        self.params[name] = t
        return t


def init_linear(store: ParamStore, name: str, fan_in: int, fan_out: int, zero: bool = False) -> None:
    store.weight(f"{name}.w", fan_in, fan_out, zero=zero)
    store.zeros(f"{name}.b", fan_out)


def init_cheb(store: ParamStore, name: str, c_in: int, c_out: int, k: int, zero: bool = False) -> None:
    store.weight(f"{name}.w", (k + 1) * c_in, c_out, zero=zero)
    store.zeros(f"{name}.b", c_out)


def init_group_norm(store: ParamStore, name: str, channels: int) -> None:
    store.ones(f"{name}.gamma", channels)
    store.zeros(f"{name}.beta", channels)


def linear(p: Mapping[str, Tensor], name: str, x: Tensor) -> Tensor:
    return ops.add(ops.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def chebyshev_terms(lap: sp.csr_matrix, x: Tensor, k: int) -> list[Tensor]:
    """``[T_0 x, ..., T_k x]`` for the rescaled Laplacian ``lap`` via the three-term recurrence."""
    terms = [x]
    if k >= 1:
        terms.append(ops.sparse_dense_matmul(lap, x))
    for _ in range(2, k + 1):
        terms.append(ops.sub(ops.scale(ops.sparse_dense_matmul(lap, terms[-1]), 2.0), terms[-2]))
    return terms


def cheb_conv(p: Mapping[str, Tensor], name: str, lap: sp.csr_matrix, x: Tensor, k: int) -> Tensor:
    w = p[f"{name}.w"]
    if w.shape[0] != (k + 1) * x.shape[-1]:
        raise ValueError(f"{name}: weight {w.shape} does not fit order {k} on {x.shape[-1]} channels")
    terms = chebyshev_terms(lap, x, k)
    stacked = terms[0] if k == 0 else ops.concat(terms, axis=-1)
    return ops.add(ops.matmul(stacked, w), p[f"{name}.b"])


def group_norm(p: Mapping[str, Tensor], name: str, x: Tensor, max_groups: int = 32) -> Tensor:
    return ops.group_norm(x, p[f"{name}.gamma"], p[f"{name}.beta"], gn_groups(x.shape[-1], max_groups))


def conv_block(p, name, lap, x, k):
    return ops.leaky_relu(cheb_conv(p, name, lap, x, k))


def init_res_block(store: ParamStore, name: str, c_in: int, c_out: int, k: int) -> None:
    mid = max(1, c_out // 2)
    init_group_norm(store, f"{name}.pre_norm", c_in)
    init_cheb(store, f"{name}.lin1", c_in, mid, 0)
    init_group_norm(store, f"{name}.norm1", mid)
    init_cheb(store, f"{name}.conv", mid, mid, k)
    init_group_norm(store, f"{name}.norm2", mid)
    init_cheb(store, f"{name}.lin2", mid, c_out, 0)
    if c_in != c_out:
        init_cheb(store, f"{name}.skip", c_in, c_out, 0)


def res_block(p, name, lap, x, k, max_groups: int = 32):
    """Pre-activation graph residual block: GN, LReLU, 1x1 / K-order / 1x1 convs, plus skip."""
    y = cheb_conv(p, f"{name}.lin1", lap, ops.leaky_relu(group_norm(p, f"{name}.pre_norm", x, max_groups)), 0)
    y = cheb_conv(p, f"{name}.conv", lap, ops.leaky_relu(group_norm(p, f"{name}.norm1", y, max_groups)), k)
    y = cheb_conv(p, f"{name}.lin2", lap, ops.leaky_relu(group_norm(p, f"{name}.norm2", y, max_groups)), 0)
    skip = cheb_conv(p, f"{name}.skip", lap, x, 0) if f"{name}.skip.w" in p else x
    return ops.add(y, skip)
