"""Quadric-error edge contraction and the down/up-sampling hierarchy built on it.

Contractions keep one endpoint in place (no optimal placement), so every
coarse vertex is an original vertex and the down-sampling operator is a pure
row selection.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .topology import TopologyError, TopologyGraph, build_topology, check_manifold_edges

MIN_VERTICES = 4


@dataclass(frozen=True, eq=False)
class SamplingLevel:
    vertex_count: int
    down: sp.csr_matrix = field(repr=False)  # (n_k, n_{k-1}) selection
    up: sp.csr_matrix = field(repr=False)  # (n_{k-1}, n_k) barycentric
    topology: TopologyGraph = field(repr=False)
    positions: np.ndarray = field(repr=False)
    retained: np.ndarray = field(repr=False)  # indices into the previous level


@dataclass(frozen=True, eq=False)
class SamplingHierarchy:
    """Level 0 is the input mesh; ``levels[i]`` describes level ``i + 1``."""

    base: TopologyGraph = field(repr=False)
    base_positions: np.ndarray = field(repr=False)
    rates: tuple[float, ...]
    levels: tuple[SamplingLevel, ...]

    @property
    def counts(self) -> list[int]:
        return [self.base.vertex_count] + [lvl.vertex_count for lvl in self.levels]

    def topology(self, level: int) -> TopologyGraph:
        return self.base if level == 0 else self.levels[level - 1].topology

    def positions(self, level: int) -> np.ndarray:
        return self.base_positions if level == 0 else self.levels[level - 1].positions


def face_quadrics(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Per-vertex sum of fundamental error quadrics of the incident face planes."""
    a, b, c = (positions[faces[:, i]] for i in range(3))
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    plane = np.concatenate([n, -(n * a).sum(axis=1, keepdims=True)], axis=1)
    kp = plane[:, :, None] * plane[:, None, :]
    q = np.zeros((len(positions), 4, 4))
    for i in range(3):
        np.add.at(q, faces[:, i], kp)
    return q


def _normal(p0, p1, p2):
    ux, uy, uz = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    vx, vy, vz = p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]
    return (uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx)


def qem_simplify(positions: np.ndarray, faces: np.ndarray, target: int) -> tuple[np.ndarray, np.ndarray]:
    """Contract edges by lowest quadric cost until ``target`` vertices remain.

    Ties are broken by the ``(min_index, max_index)`` pair. Contractions that
    violate the link condition are skipped; ones that flip an adjacent face
    normal are skipped unless nothing else is left.

    Returns the sorted retained vertex indices and the surviving faces in the
    original indexing.
    """
    n = len(positions)
    if target < MIN_VERTICES:
        raise TopologyError(f"cannot simplify below {MIN_VERTICES} vertices (asked for {target})")
    if target >= n:
        return np.arange(n), faces.copy()

    q = face_quadrics(positions, faces)
    hom = np.concatenate([positions, np.ones((n, 1))], axis=1)
    nbrs: list[set[int]] = [set() for _ in range(n)]
    vfaces: list[set[int]] = [set() for _ in range(n)]
    face_list = [list(map(int, f)) for f in faces]
    for fi, (i, j, k) in enumerate(face_list):
        nbrs[i].update((j, k))
        nbrs[j].update((i, k))
        nbrs[k].update((i, j))
        vfaces[i].add(fi)
        vfaces[j].add(fi)
        vfaces[k].add(fi)
    pos_list = [tuple(p) for p in positions.tolist()]
    alive_face = [True] * len(face_list)
    alive = np.ones(n, dtype=bool)
    stamp = [0] * n
    heap: list[tuple[float, int, int, int, int]] = []
    # edges refused by a topological test; retried once their neighbourhood changes
    rejected: dict[int, set[int]] = {}

    def push(u: int, v: int) -> None:
        if u > v:
            u, v = v, u
        qq = q[u] + q[v]
        cu = float(hom[u] @ qq @ hom[u])
        cv = float(hom[v] @ qq @ hom[v])
        heapq.heappush(heap, (min(cu, cv), u, v, stamp[u], stamp[v]))

    def push_all() -> None:
        heap.clear()
        rejected.clear()
        for u in np.flatnonzero(alive):
            for v in nbrs[u]:
                if u < v:
                    push(int(u), v)

    def link_ok(u: int, v: int) -> bool:
        shared_faces = sum(1 for f in vfaces[u] if v in face_list[f])
        return len(nbrs[u] & nbrs[v]) == shared_faces

    def flips(keep: int, gone: int) -> bool:
        pk = pos_list[keep]
        for f in vfaces[gone]:
            tri = face_list[f]
            if keep in tri:
                continue
            pts = [pos_list[t] for t in tri]
            before = _normal(*pts)
            pts[tri.index(gone)] = pk
            after = _normal(*pts)
            if before[0] * after[0] + before[1] * after[1] + before[2] * after[2] <= 0.0:
                return True
        return False

    count = n
    strict = True
    push_all()
    while count > target:
        if not heap:
            if not strict:
                raise TopologyError(f"simplification stalled at {count} vertices (target {target})")
            strict = False
            push_all()
            continue
        _, u, v, su, sv = heapq.heappop(heap)
        if not (alive[u] and alive[v]) or su != stamp[u] or sv != stamp[v] or v not in nbrs[u]:
            continue
        if not link_ok(u, v):
            rejected.setdefault(u, set()).add(v)
            rejected.setdefault(v, set()).add(u)
            continue
        qq = q[u] + q[v]
        cu = float(hom[u] @ qq @ hom[u])
        cv = float(hom[v] @ qq @ hom[v])
        keep, gone = (u, v) if cu <= cv else (v, u)
        if strict and flips(keep, gone):
            rejected.setdefault(u, set()).add(v)
            rejected.setdefault(v, set()).add(u)
            continue
        if count - 1 < MIN_VERTICES:
            raise TopologyError(f"cannot simplify below {MIN_VERTICES} vertices")

        for f in list(vfaces[gone]):
            tri = face_list[f]
            if keep in tri:
                alive_face[f] = False
                for t in tri:
                    vfaces[t].discard(f)
            else:
                tri[tri.index(gone)] = keep
                vfaces[keep].add(f)
        vfaces[gone].clear()
        for w in nbrs[gone]:
            nbrs[w].discard(gone)
            if w != keep:
                nbrs[w].add(keep)
                nbrs[keep].add(w)
        nbrs[keep].discard(gone)
        nbrs[gone].clear()
        alive[gone] = False
        q[keep] = qq
        count -= 1

        stamp[keep] += 1
        for x in nbrs[keep]:
            push(keep, x)
        for w in (gone, keep, *nbrs[keep]):
            for x in rejected.pop(w, ()):
                rejected.get(x, set()).discard(w)
                if alive[w] and alive[x] and x in nbrs[w] and keep not in (w, x):
                    push(w, x)

    retained = np.flatnonzero(alive)
    out_faces = np.array([face_list[f] for f in range(len(face_list)) if alive_face[f]], dtype=np.int64)
    return retained, out_faces


def closest_point_barycentric(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric weights ``(N, 3)`` of the closest triangle point, and squared distances.

    Vectorized region test from Ericson, Real-Time Collision Detection 5.1.5.
    All inputs broadcast to ``(N, 3)``.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    shape = d1.shape
    w = np.zeros(shape + (3,))
    done = np.zeros(shape, dtype=bool)

    def assign(mask, u, v, t):
        m = mask & ~done
        w[m, 0] = u[m] if np.ndim(u) else u
        w[m, 1] = v[m] if np.ndim(v) else v
        w[m, 2] = t[m] if np.ndim(t) else t
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), 1.0, 0.0, 0.0)
        assign((d3 >= 0) & (d4 <= d3), 0.0, 1.0, 0.0)
        s = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), 1.0 - s, s, 0.0)
        assign((d6 >= 0) & (d5 <= d6), 0.0, 0.0, 1.0)
        t = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), 1.0 - t, 0.0, t)
        r = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), 0.0, 1.0 - r, r)
        denom = va + vb + vc
        vv = vb / denom
        ww = vc / denom
        assign(np.ones(shape, dtype=bool), 1.0 - vv - ww, vv, ww)
    w = np.nan_to_num(w)
    w = np.clip(w, 0.0, 1.0)
    w /= w.sum(-1, keepdims=True)
    closest = w[..., 0:1] * a + w[..., 1:2] * b + w[..., 2:3] * c
    d = ((p - closest) ** 2).sum(-1)
    return w, d


def upsampling_matrix(fine_positions: np.ndarray, retained: np.ndarray, coarse_faces: np.ndarray) -> sp.csr_matrix:
    """``(n_fine, n_coarse)`` interpolation: identity rows for retained vertices,
    closest-triangle barycentric rows for discarded ones."""
    n_fine = len(fine_positions)
    n_coarse = len(retained)
    coarse_pos = fine_positions[retained]
    rows, cols, vals = [retained], [np.arange(n_coarse)], [np.ones(n_coarse)]

    mask = np.ones(n_fine, dtype=bool)
    mask[retained] = False
    discarded = np.flatnonzero(mask)
    if len(discarded):
        tri_pts = coarse_pos[coarse_faces]  # (F, 3, 3)
        centroid = tri_pts.mean(axis=1)
        radius = np.linalg.norm(tri_pts - centroid[:, None], axis=2).max(axis=1)
        p = fine_positions[discarded]
        # The nearest coarse vertex bounds the distance to the closest triangle,
        # so only triangles whose bounding sphere reaches that ball can win.
        # Compact triangles go through a KD-tree; the few large ones are always tested.
        d_vert, _ = cKDTree(coarse_pos).query(p)
        thr = float(np.quantile(radius, 0.95))
        small = np.flatnonzero(radius <= thr)
        large = np.flatnonzero(radius > thr)
        near = cKDTree(centroid[small]).query_ball_point(p, d_vert + thr + 1e-12)
        lens = np.array([len(c) for c in near]) + len(large)
        pi_all = np.repeat(np.arange(len(discarded)), lens)
        fi_all = np.concatenate(
            [np.concatenate([small[np.asarray(c, dtype=np.int64)], large]) for c in near]
        )
        reach = np.linalg.norm(centroid[fi_all] - p[pi_all], axis=1) <= d_vert[pi_all] + radius[fi_all] + 1e-12
        pi_all, fi_all = pi_all[reach], fi_all[reach]
        w, d = closest_point_barycentric(p[pi_all], tri_pts[fi_all, 0], tri_pts[fi_all, 1], tri_pts[fi_all, 2])
        # per point: smallest distance, then smallest face index on ties
        order = np.lexsort((fi_all, d, pi_all))
        first = np.ones(len(order), dtype=bool)
        first[1:] = pi_all[order][1:] != pi_all[order][:-1]
        best = order[first]
        rows.append(np.repeat(discarded[pi_all[best]], 3))
        cols.append(coarse_faces[fi_all[best]].ravel())
        vals.append(w[best].ravel())
    up = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_fine, n_coarse)
    )
    up.eliminate_zeros()
    return up


def build_sampling_hierarchy(g: TopologyGraph, vertex_positions: np.ndarray, factors: Sequence[float]) -> SamplingHierarchy:
    positions = np.asarray(vertex_positions, dtype=np.float64)
    if positions.shape != (g.vertex_count, 3):
        raise ValueError(f"positions {positions.shape} do not match {g.vertex_count} vertices")
    if any(f <= 0 for f in factors):
        raise ValueError(f"sampling factors must be positive: {list(factors)}")
    check_manifold_edges(g)

    levels = []
    topo, pos = g, positions
    for rate in factors:
        target = math.ceil(topo.vertex_count / rate)
        if target < MIN_VERTICES:
            raise TopologyError(f"level with {target} vertices is below the minimum of {MIN_VERTICES}")
        retained, faces_old = qem_simplify(pos, topo.faces, target)
        remap = -np.ones(topo.vertex_count, dtype=np.int64)
        remap[retained] = np.arange(len(retained))
        faces_new = remap[faces_old]
        down = sp.csr_matrix(
            (np.ones(len(retained)), (np.arange(len(retained)), retained)), shape=(len(retained), topo.vertex_count)
        )
        up = upsampling_matrix(pos, retained, faces_new)
        new_topo = build_topology(faces_new, len(retained))
        new_pos = pos[retained]
        levels.append(SamplingLevel(len(retained), down, up, new_topo, new_pos, retained))
        topo, pos = new_topo, new_pos
    return SamplingHierarchy(g, positions, tuple(float(f) for f in factors), tuple(levels))
