"""Graph Laplacians and Chebyshev spectral filtering."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp

from .topology import TopologyError, TopologyGraph

Mode = Literal["normalized", "combinatorial"]


@dataclass(frozen=True, eq=False)
class ScaledLaplacian:
    """A Laplacian ``L`` with the spectral bound used to rescale it into [-1, 1]."""

    matrix: sp.csr_matrix = field(repr=False)
    lambda_max: float
    mode: str = "normalized"

    @property
    def rescaled(self) -> sp.csr_matrix:
        """``2 L / lambda_max - I``, cached on first access."""
        cached = self.__dict__.get("_rescaled")
        if cached is None:
            n = self.matrix.shape[0]
            cached = (self.matrix * (2.0 / self.lambda_max) - sp.identity(n, format="csr")).tocsr()
            object.__setattr__(self, "_rescaled", cached)
        return cached


def power_iteration_lambda_max(m: sp.spmatrix, rtol: float = 1e-6, max_iter: int = 100_000, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Stops when the eigen-residual ``|M x - lam x|`` falls below ``rtol * lam``;
    for symmetric ``M`` that bounds the eigenvalue error by the same amount.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(m.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = m @ x
        lam = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        if np.linalg.norm(y - lam * x) <= rtol * abs(lam):
            return lam
        x = y / ny
    return lam


def combinatorial_laplacian(g: TopologyGraph, mode: Mode = "normalized") -> ScaledLaplacian:
    """``D - A`` (with power-iteration bound) or ``I - D^-1/2 A D^-1/2`` (bound fixed at 2)."""
    n_comp, labels = g.components()
    if n_comp > 1:
        sizes = np.bincount(labels)
        smallest = int(np.argmin(sizes))
        vertex = int(np.flatnonzero(labels == smallest)[0])
        raise TopologyError(f"graph is disconnected ({n_comp} components); vertex {vertex} lies in the smallest one")
    a = g.adjacency
    deg = np.asarray(a.sum(axis=1)).ravel()
    if mode == "combinatorial":
        lap = (sp.diags(deg) - a).tocsr()
        lam = power_iteration_lambda_max(lap) if g.vertex_count > 1 else 1.0
        return ScaledLaplacian(lap, lam if lam > 0 else 1.0, mode)
    if mode == "normalized":
        d = sp.diags(1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)))
        lap = (sp.identity(g.vertex_count) - d @ a @ d).tocsr()
        return ScaledLaplacian(lap, 2.0, mode)
    raise ValueError(f"unknown Laplacian mode {mode!r}")


def chebyshev_apply(lap: ScaledLaplacian, x: np.ndarray, weights: Sequence[np.ndarray], k: int | None = None) -> np.ndarray:
    """``sum_k T_k(L~) X W_k`` by the three-term recurrence on a ``(V, C_in)`` array."""
    k = len(weights) - 1 if k is None else k
    if len(weights) != k + 1:
        raise ValueError(f"order {k} needs {k + 1} weight matrices, got {len(weights)}")
    if x.shape[0] != lap.matrix.shape[0]:
        raise ValueError(f"features have {x.shape[0]} rows, graph has {lap.matrix.shape[0]} vertices")
    for w in weights:
        if w.shape[0] != x.shape[1]:
            raise ValueError(f"weight {w.shape} incompatible with {x.shape[1]} input features")
    lt = lap.rescaled
    t_prev, t_cur = x, None
    y = x @ weights[0]
    for order in range(1, k + 1):
        t_next = lt @ t_prev if order == 1 else 2.0 * (lt @ t_cur) - t_prev
        if order > 1:
            t_prev = t_cur
        t_cur = t_next
        y = y + t_cur @ weights[order]
    return y
