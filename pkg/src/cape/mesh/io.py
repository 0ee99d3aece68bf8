"""OBJ / binary PLY mesh files and hierarchy containers. Vertex order is preserved."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

from .. import container
from .laplacian import ScaledLaplacian, combinatorial_laplacian
from .qem import SamplingHierarchy, SamplingLevel
from .topology import build_topology


def write_obj(path: str | Path, vertices: np.ndarray, faces: np.ndarray) -> None:
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in np.asarray(vertices, dtype=np.float64)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces, dtype=np.int64)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def write_ply(
    path: str | Path,
    vertices: np.ndarray,
    faces: np.ndarray,
    vertex_scalars: Mapping[str, np.ndarray] | None = None,
) -> None:
    """Binary little-endian PLY; extra per-vertex float64 properties go after x, y, z."""
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    scalars = dict(vertex_scalars or {})
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")] + [(k, "<f8") for k in scalars]
    rec = np.empty(len(v), dtype=fields)
    rec["x"], rec["y"], rec["z"] = v[:, 0], v[:, 1], v[:, 2]
    for k, s in scalars.items():
        rec[k] = np.asarray(s, dtype=np.float64)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(v)}"]
    header += [f"property double {name}" for name, _ in fields]
    header += [f"element face {len(f)}", "property list uchar int vertex_indices", "end_header"]
    frec = np.empty(len(f), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    frec["n"] = 3
    frec["idx"] = f
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())
        fh.write(frec.tobytes())


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1", "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2", "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Read a binary little-endian triangle PLY; returns vertices, faces and extra vertex scalars."""
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise ValueError(f"{path}: only binary_little_endian PLY is supported")
    n_v = n_f = 0
    vfields: list[tuple[str, str]] = []
    list_types = ("u1", "i4")
    current = None
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n_v, current = int(parts[2]), "vertex"
        elif parts[:2] == ["element", "face"]:
            n_f, current = int(parts[2]), "face"
        elif parts and parts[0] == "property":
            if current == "vertex":
                vfields.append((parts[2], "<" + _PLY_TYPES[parts[1]]))
            elif current == "face" and parts[1] == "list":
                list_types = (_PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])
    vdt = np.dtype(vfields)
    vrec = np.frombuffer(raw, dtype=vdt, count=n_v, offset=end)
    verts = np.column_stack([vrec["x"], vrec["y"], vrec["z"]]).astype(np.float64)
    fdt = np.dtype([("n", "<" + list_types[0]), ("idx", "<" + list_types[1], (3,))])
    frec = np.frombuffer(raw, dtype=fdt, count=n_f, offset=end + vdt.itemsize * n_v)
    if n_f and np.any(frec["n"] != 3):
        raise ValueError(f"{path}: only triangle faces are supported")
    extra = {name: vrec[name].astype(np.float64) for name, _ in vfields if name not in ("x", "y", "z")}
    return verts, frec["idx"].astype(np.int64), extra


def write_mesh(path: str | Path, vertices: np.ndarray, faces: np.ndarray, fmt: str | None = None, **kw) -> None:
    fmt = fmt or Path(path).suffix.lstrip(".").lower()
    if fmt == "obj":
        write_obj(path, vertices, faces)
    elif fmt == "ply":
        write_ply(path, vertices, faces, **kw)
    else:
        raise ValueError(f"unknown mesh format {fmt!r}")


def hierarchy_arrays(h: SamplingHierarchy, prefix: str = "") -> tuple[dict, dict]:
    meta = {"level_counts": h.counts, "rates": list(h.rates)}
    arrays: dict = {f"{prefix}faces_0": h.base.faces, f"{prefix}positions_0": h.base_positions}
    for i, lvl in enumerate(h.levels, start=1):
        arrays[f"{prefix}down_{i}"] = lvl.down
        arrays[f"{prefix}up_{i}"] = lvl.up
        arrays[f"{prefix}faces_{i}"] = lvl.topology.faces
        arrays[f"{prefix}retained_{i}"] = lvl.retained
    return meta, arrays


def hierarchy_from_arrays(meta: dict, arrays: dict, prefix: str = "") -> SamplingHierarchy:
    counts = meta["level_counts"]
    base = build_topology(arrays[f"{prefix}faces_0"], counts[0])
    pos = arrays[f"{prefix}positions_0"]
    levels = []
    for i in range(1, len(counts)):
        retained = arrays[f"{prefix}retained_{i}"].astype(np.int64)
        pos = pos[retained]
        topo = build_topology(arrays[f"{prefix}faces_{i}"], counts[i])
        down = arrays[f"{prefix}down_{i}"].tocsr()
        up = arrays[f"{prefix}up_{i}"].tocsr()
        levels.append(SamplingLevel(counts[i], down, up, topo, pos, retained))
    return SamplingHierarchy(base, arrays[f"{prefix}positions_0"], tuple(meta["rates"]), tuple(levels))


def save_hierarchy(path: str | Path, h: SamplingHierarchy, mode: str = "normalized") -> None:
    meta, arrays = hierarchy_arrays(h)
    meta["normalization"] = mode
    container.save(path, meta, arrays)


def load_hierarchy(path: str | Path) -> tuple[SamplingHierarchy, str]:
    meta, arrays = container.load(path)
    return hierarchy_from_arrays(meta, arrays), meta["normalization"]


def level_laplacians(h: SamplingHierarchy, mode: str = "normalized") -> list[ScaledLaplacian]:
    return [combinatorial_laplacian(h.topology(i), mode) for i in range(len(h.counts))]
