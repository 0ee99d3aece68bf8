from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class TopologyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TopologyGraph:
    """Triangle-mesh connectivity shared by every per-vertex tensor."""

    vertex_count: int
    faces: np.ndarray  # (F, 3) int64
    edges: np.ndarray  # (E, 2) int64, each row sorted, rows lexicographically sorted
    adjacency: sp.csr_matrix = field(repr=False)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degree(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def incidence(self) -> sp.csr_matrix:
        """Signed ``(E, V)`` matrix mapping per-vertex values to ``x[i] - x[j]`` per edge ``(i, j)``."""
        e = len(self.edges)
        rows = np.repeat(np.arange(e), 2)
        cols = self.edges.ravel()
        vals = np.tile([1.0, -1.0], e)
        return sp.csr_matrix((vals, (rows, cols)), shape=(e, self.vertex_count))

    def components(self) -> tuple[int, np.ndarray]:
        return connected_components(self.adjacency, directed=False)


def build_topology(faces, vertex_count: int) -> TopologyGraph:
    if vertex_count <= 0:
        raise TopologyError(f"vertex_count must be positive, got {vertex_count}")
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if f.size:
        bad = np.flatnonzero((f < 0).any(axis=1) | (f >= vertex_count).any(axis=1))
        if bad.size:
            raise TopologyError(f"face {bad[0]} has an index outside [0, {vertex_count}): {f[bad[0]].tolist()}")
        degenerate = np.flatnonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))
        if degenerate.size:
            raise TopologyError(f"face {degenerate[0]} is degenerate: {f[degenerate[0]].tolist()}")
    pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    pairs.sort(axis=1)
    edges = np.unique(pairs, axis=0) if len(pairs) else np.zeros((0, 2), dtype=np.int64)
    ones = np.ones(len(edges))
    adj = sp.coo_matrix(
        (np.concatenate([ones, ones]), (np.concatenate([edges[:, 0], edges[:, 1]]), np.concatenate([edges[:, 1], edges[:, 0]]))),
        shape=(vertex_count, vertex_count),
    ).tocsr()
    return TopologyGraph(vertex_count=int(vertex_count), faces=f, edges=edges, adjacency=adj)


def check_manifold_edges(g: TopologyGraph) -> None:
    """Raise if any edge is shared by more than two faces."""
    f = g.faces
    pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    pairs.sort(axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    over = np.flatnonzero(counts > 2)
    if over.size:
        i, j = uniq[over[0]]
        raise TopologyError(f"non-manifold edge ({i}, {j}) is shared by {counts[over[0]]} faces")
