"""Displacement datasets: a seeded synthetic generator and the on-disk layout.

Directory layout::

    topology.json          vertex_count, faces, positions, mask, retained_joints
    records/000000.rec     container: header {pose, clothing_type, split}, array "offsets" (V, 3)

The synthetic generator plants a known pose response::

    offsets = type_field[c] + reshape(A @ vec(R_j(theta) - I)) + noise

with ``A`` a fixed random low-rank map, so the derivative of the offsets with
respect to the pose feature is exactly ``A``.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from . import container
from .body import CLOTHING_TYPES, PoseParams, batch_rodrigues, clothing_index
from .mesh.laplacian import combinatorial_laplacian
from .mesh.primitives import capsule, icosphere
from .mesh.topology import TopologyGraph, build_topology

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    topology: str = "cylinder"
    n_rings: int = 20
    n_segments: int = 20
    subdivisions: int = 3
    n_samples: int = 600
    test_every: int = 6
    pose_joints: int = 14
    n_clothing: int = 4
    pose_std: float = 0.4
    type_scale: float = 0.02
    pose_scale: float = 0.01
    pose_rank: int = 24
    n_basis: int = 16
    noise_scale: float = 0.001
    mask_margin: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.topology not in ("cylinder", "icosphere"):
            raise DatasetError(f"unknown synthetic topology {self.topology!r}")
        if self.n_samples < 1:
            raise DatasetError("n_samples must be positive")
        if not 1 <= self.n_clothing <= len(CLOTHING_TYPES):
            raise DatasetError(f"n_clothing must be in [1, {len(CLOTHING_TYPES)}]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class Dataset:
    """Columnar records over one shared topology."""

    topology: TopologyGraph = field(repr=False)
    positions: np.ndarray = field(repr=False)  # (V, 3) rest geometry used for the sampling hierarchy
    mask: np.ndarray = field(repr=False)  # (V,) bool
    offsets: np.ndarray = field(repr=False)  # (N, V, 3)
    theta: np.ndarray = field(repr=False)  # (N, J, 3) axis-angle
    labels: np.ndarray = field(repr=False)  # (N,) clothing type indices
    is_test: np.ndarray = field(repr=False)  # (N,) bool
    retained_joints: tuple[int, ...] = ()
    pose_map: np.ndarray | None = field(default=None, repr=False)  # planted (V*3, 9*J), synthetic only
    type_fields: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.offsets)

    @property
    def n_vertices(self) -> int:
        return self.topology.vertex_count

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.int64)
        return Dataset(
            self.topology, self.positions, self.mask, self.offsets[idx], self.theta[idx], self.labels[idx],
            self.is_test[idx], self.retained_joints, self.pose_map, self.type_fields,
        )

    def split(self, which: str) -> "Dataset":
        if which not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {which!r}")
        return self.subset(np.flatnonzero(self.is_test if which == "test" else ~self.is_test))

    def pose_rotations(self) -> np.ndarray:
        """``(N, 9 * len(retained))`` flattened rotation matrices of the retained joints."""
        return pose_rotation_features(self.theta, self.retained_joints)

    def clothing_onehot(self) -> np.ndarray:
        return np.eye(len(CLOTHING_TYPES))[self.labels]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for a in (self.topology.faces, self.mask, self.offsets, self.theta, self.labels, self.is_test):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]


def pose_rotation_features(theta: np.ndarray, retained) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    rots = batch_rodrigues(theta[:, list(retained)].reshape(-1, 3))
    return rots.reshape(len(theta), -1)


def pose_feature_batch(theta: np.ndarray) -> np.ndarray:
    """``vec(R_j - I)`` for every joint: ``(N, 9 * J)``."""
    theta = np.asarray(theta, dtype=np.float64)
    n, j, _ = theta.shape
    rots = batch_rodrigues(theta.reshape(-1, 3)).reshape(n, j, 3, 3)
    return (rots - np.eye(3)).reshape(n, -1)


def is_test_index(seed: int, index, test_every: int) -> np.ndarray:
    return (np.asarray(index) + seed) % test_every == 0


def synthetic_geometry(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    if spec.topology == "cylinder":
        return capsule(spec.n_rings, spec.n_segments)
    return icosphere(spec.subdivisions, radius=0.5)


def low_frequency_basis(g: TopologyGraph, n: int) -> np.ndarray:
    """The ``n`` smoothest non-constant Laplacian eigenvectors, ``(V, n)``."""
    lap = combinatorial_laplacian(g, "combinatorial").matrix
    k = min(n + 1, g.vertex_count - 1)
    if g.vertex_count <= 1500:
        _, vecs = np.linalg.eigh(lap.toarray())
    else:
        _, vecs = spla.eigsh(lap.tocsc(), k=k, sigma=-1e-3, which="LM")
    vecs = vecs[:, 1:k]
    # eigenvector signs are solver-dependent; pin them for determinism
    signs = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(vecs.shape[1])])
    return vecs * signs


def generate(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    pos, faces = synthetic_geometry(spec)
    g = build_topology(faces, len(pos))
    v = g.vertex_count
    z = pos[:, 2]
    h = (z - z.min()) / (z.max() - z.min())
    mask = (h >= spec.mask_margin) & (h <= 1.0 - spec.mask_margin)

    basis = low_frequency_basis(g, spec.n_basis)
    nb = basis.shape[1]
    decay = 1.0 / np.sqrt(1.0 + np.arange(nb))

    def smooth_field() -> np.ndarray:
        f = basis @ (rng.standard_normal((nb, 3)) * decay[:, None])
        f[~mask] = 0.0
        return f / np.sqrt((f[mask] ** 2).sum(axis=1).mean())

    type_fields = np.stack([spec.type_scale * smooth_field() for _ in range(len(CLOTHING_TYPES))])

    n_feat = 9 * spec.pose_joints
    spatial = np.stack([smooth_field().reshape(-1) for _ in range(spec.pose_rank)], axis=1)  # (3V, r)
    mixing = rng.standard_normal((spec.pose_rank, n_feat)) / np.sqrt(spec.pose_rank * n_feat)
    pose_map = spatial @ mixing
    # scale so that the pose term has RMS per-vertex norm ~ pose_scale at the sampling std
    probe = rng.normal(0.0, spec.pose_std, size=(256, spec.pose_joints, 3))
    resp = (pose_feature_batch(probe) @ pose_map.T).reshape(256, v, 3)
    pose_map *= spec.pose_scale / np.sqrt((resp[:, mask] ** 2).sum(-1).mean())

    n = spec.n_samples
    theta = rng.normal(0.0, spec.pose_std, size=(n, spec.pose_joints, 3))
    labels = rng.integers(0, spec.n_clothing, size=n)
    noise = spec.noise_scale * rng.standard_normal((n, v, 3))
    offsets = type_fields[labels] + (pose_feature_batch(theta) @ pose_map.T).reshape(n, v, 3) + noise
    offsets[:, ~mask] = 0.0
    return Dataset(
        g, pos, mask, offsets, theta, labels, is_test_index(spec.seed, np.arange(n), spec.test_every),
        tuple(range(spec.pose_joints)), pose_map, type_fields,
    )


def planted_pose_response(ds: Dataset, theta: np.ndarray) -> np.ndarray:
    """The generator's pose-dependent component for ``(N, J, 3)`` poses, ``(N, V, 3)``."""
    if ds.pose_map is None:
        raise DatasetError("dataset carries no planted pose map")
    theta = np.asarray(theta, dtype=np.float64)
    return (pose_feature_batch(theta) @ ds.pose_map.T).reshape(len(theta), ds.n_vertices, 3)


def save_dataset(ds: Dataset, root: str | Path) -> None:
    root = Path(root)
    (root / "records").mkdir(parents=True, exist_ok=True)
    topo = {
        "vertex_count": ds.n_vertices,
        "faces": ds.topology.faces.tolist(),
        "positions": ds.positions.tolist(),
        "mask": ds.mask.astype(int).tolist(),
        "retained_joints": list(ds.retained_joints),
    }
    (root / "topology.json").write_text(json.dumps(topo))
    for i in range(len(ds)):
        meta = {
            "pose": ds.theta[i].tolist(),
            "clothing_type": CLOTHING_TYPES[int(ds.labels[i])],
            "split": "test" if ds.is_test[i] else "train",
        }
        container.save(root / "records" / f"{i:06d}.rec", meta, {"offsets": ds.offsets[i]})


def load_external(root: str | Path) -> Dataset:
    root = Path(root)
    topo_path = root / "topology.json"
    if not topo_path.exists():
        raise DatasetError(f"{root}: missing topology.json")
    topo = json.loads(topo_path.read_text())
    g = build_topology(topo["faces"], topo["vertex_count"])
    v = g.vertex_count
    positions = np.asarray(topo.get("positions", np.zeros((v, 3))), dtype=np.float64).reshape(v, 3)
    mask = np.asarray(topo.get("mask", np.ones(v)), dtype=bool)
    retained = tuple(topo.get("retained_joints", ()))

    files = sorted((root / "records").glob("*.rec")) if (root / "records").is_dir() else []
    if not files:
        warnings.warn(f"{root}: no records found; returning an empty dataset", RuntimeWarning)
    offsets, thetas, labels, is_test = [], [], [], []
    for f in files:
        try:
            meta, arrays = container.load(f)
        except container.ContainerError as exc:
            raise DatasetError(f"{f}: {exc}") from exc
        for key in ("pose", "clothing_type"):
            if key not in meta:
                raise DatasetError(f"{f}: missing {key!r} metadata")
        off = arrays.get("offsets")
        if off is None or off.shape != (v, 3):
            shape = None if off is None else off.shape
            raise DatasetError(f"{f}: offsets {shape} do not match the shared topology ({v} vertices)")
        if not np.isfinite(off).all():
            raise DatasetError(f"{f}: offsets contain non-finite values")
        try:
            labels.append(clothing_index(meta["clothing_type"]))
        except ValueError as exc:
            raise DatasetError(f"{f}: {exc}") from exc
        offsets.append(off)
        thetas.append(PoseParams(np.asarray(meta["pose"], dtype=np.float64)).theta)
        is_test.append(meta.get("split", "train") == "test")
    if thetas and len({t.shape for t in thetas}) > 1:
        raise DatasetError(f"{root}: records disagree on the number of pose joints")
    n_joints = thetas[0].shape[0] if thetas else max(len(retained), 1)
    if not retained:
        retained = tuple(range(n_joints))
    return Dataset(
        g,
        positions,
        mask,
        np.asarray(offsets, dtype=np.float64).reshape(-1, v, 3),
        np.asarray(thetas, dtype=np.float64).reshape(-1, n_joints, 3),
        np.asarray(labels, dtype=np.int64),
        np.asarray(is_test, dtype=bool),
        retained,
    )
