"""Closed genus-0 test meshes."""
from __future__ import annotations

import numpy as np


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Loop-style midpoint subdivision of an icosahedron: 12, 42, 162, 642, ... vertices."""
    t = (1.0 + 5.0**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = v[i] + v[j]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(v) * radius, np.array(faces, dtype=np.int64)


def capsule(
    n_rings: int = 20, n_segments: int = 20, radius: float = 0.15, height: float = 1.0, bulge: float = 0.5
) -> tuple[np.ndarray, np.ndarray]:
    """Closed tube with a pole vertex at each end.

    ``n_rings * n_segments + 2`` vertices; vertex 0 is the bottom pole and the
    last vertex the top pole. Rings run bottom to top along +z. The radius
    profile ``radius * (1 - bulge + bulge * sin(phi))`` keeps the surface curved
    in both directions (``bulge=1`` gives a spheroid), which matters for
    quadric simplification: flat directions have zero contraction cost.
    """
    if n_rings < 1 or n_segments < 3:
        raise ValueError("need at least one ring and three segments")
    ang = 2.0 * np.pi * np.arange(n_segments) / n_segments
    phi = np.pi * np.arange(1, n_rings + 1) / (n_rings + 1)
    zs = 0.5 * height * (1.0 - np.cos(phi))
    rs = radius * (1.0 - bulge + bulge * np.sin(phi))
    side = np.concatenate(
        [np.column_stack([r * np.cos(ang), r * np.sin(ang), np.full(n_segments, z)]) for r, z in zip(rs, zs)]
    )
    verts = np.vstack([[0.0, 0.0, 0.0], side, [0.0, 0.0, height]])
    top = len(verts) - 1

    def vid(r: int, s: int) -> int:
        return 1 + r * n_segments + (s % n_segments)

    faces = []
    for s in range(n_segments):
        faces.append((0, vid(0, s + 1), vid(0, s)))
        faces.append((top, vid(n_rings - 1, s), vid(n_rings - 1, s + 1)))
    for r in range(n_rings - 1):
        for s in range(n_segments):
            a, b = vid(r, s), vid(r, s + 1)
            c, d = vid(r + 1, s), vid(r + 1, s + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    return verts, np.array(faces, dtype=np.int64)


def smpl_sized_capsule() -> tuple[np.ndarray, np.ndarray]:
    """A 6890-vertex capsule (84 rings x 82 segments + 2 poles), the SMPL vertex count."""
    return capsule(n_rings=84, n_segments=82, radius=0.15, height=1.7)
