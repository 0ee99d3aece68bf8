"""Binary container: magic, JSON header, then little-endian array payloads.

Layout::

    b"CAPEBIN1" | uint32 header_len | header JSON (utf-8) | payload

The header holds caller metadata under ``"meta"`` and an ``"arrays"`` list.
Dense arrays are stored as ``<f8`` (or ``<i8`` for integer data) in C order.
Sparse matrices are stored as coordinate triplets, each packed as
``row: <u4, col: <u4, value: <f8``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import scipy.sparse as sp

MAGIC = b"CAPEBIN1"
TRIPLET = np.dtype([("row", "<u4"), ("col", "<u4"), ("value", "<f8")])


class ContainerError(ValueError):
    pass


def dumps(meta: Mapping[str, Any], arrays: Mapping[str, Any]) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        if sp.issparse(arr):
            coo = arr.tocoo()
            order = np.lexsort((coo.col, coo.row))
            trip = np.empty(coo.nnz, dtype=TRIPLET)
            trip["row"] = coo.row[order]
            trip["col"] = coo.col[order]
            trip["value"] = coo.data[order]
            raw = trip.tobytes()
            entries.append({"name": name, "kind": "coo", "shape": list(arr.shape), "nnz": int(coo.nnz),
                            "offset": offset, "nbytes": len(raw)})
        else:
            a = np.asarray(arr)
            dtype = "<i8" if np.issubdtype(a.dtype, np.integer) or a.dtype == bool else "<f8"
            raw = np.ascontiguousarray(a, dtype=dtype).tobytes()
            entries.append({"name": name, "kind": "dense", "dtype": dtype, "shape": list(a.shape),
                            "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": dict(meta), "arrays": entries}, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)


def loads(buf: bytes) -> tuple[dict, dict[str, Any]]:
    if buf[: len(MAGIC)] != MAGIC:
        raise ContainerError("not a container file (bad magic)")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    try:
        header = json.loads(buf[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt header: {exc}") from exc
    base = pos + hlen
    arrays: dict[str, Any] = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        raw = buf[start : start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise ContainerError(f"truncated payload for array {e['name']!r}")
        if e["kind"] == "coo":
            trip = np.frombuffer(raw, dtype=TRIPLET)
            arrays[e["name"]] = sp.csr_matrix(
                (trip["value"].astype(np.float64), (trip["row"].astype(np.int64), trip["col"].astype(np.int64))),
                shape=tuple(e["shape"]),
            )
        else:
            arrays[e["name"]] = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"]).copy()
    return header["meta"], arrays


def save(path: str | Path, meta: Mapping[str, Any], arrays: Mapping[str, Any]) -> None:
    Path(path).write_bytes(dumps(meta, arrays))


def load(path: str | Path) -> tuple[dict, dict[str, Any]]:
    return loads(Path(path).read_bytes())
