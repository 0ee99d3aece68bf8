"""Additive skinned body model with a clothing displacement layer.

Rest shape ``T = template + shape_dirs . beta + pose_dirs . vec(R_j - I)``,
clothed rest shape ``T + offsets``; both are posed with linear blend
skinning around joints regressed from the *unclothed* rest shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import container

CLOTHING_TYPES: tuple[str, ...] = ("shortlong", "shortshort", "longshort", "longlong")


class BodyModelError(ValueError):
    pass


def clothing_index(label: str) -> int:
    try:
        return CLOTHING_TYPES.index(label)
    except ValueError:
        raise BodyModelError(f"unknown clothing type {label!r}; expected one of {CLOTHING_TYPES}") from None


def clothing_onehot(label: str) -> np.ndarray:
    v = np.zeros(len(CLOTHING_TYPES))
    v[clothing_index(label)] = 1.0
    return v


@dataclass(frozen=True, eq=False)
class BodyModelSpec:
    template: np.ndarray  # (V, 3)
    shape_dirs: np.ndarray  # (V, 3, n_beta)
    pose_dirs: np.ndarray  # (V, 3, 9 * (J - 1))
    joint_regressor: np.ndarray  # (J, V)
    skin_weights: np.ndarray  # (V, J)
    parents: np.ndarray  # (J,), root = -1
    retained_joints: tuple[int, ...] = ()
    order: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = self.template.shape[0]
        j = len(self.parents)
        if self.template.shape != (v, 3):
            raise BodyModelError(f"template must be (V, 3), got {self.template.shape}")
        if self.shape_dirs.ndim != 3 or self.shape_dirs.shape[:2] != (v, 3):
            raise BodyModelError(f"shape_dirs must be (V, 3, n_beta), got {self.shape_dirs.shape}")
        if self.pose_dirs.shape != (v, 3, 9 * (j - 1)):
            raise BodyModelError(f"pose_dirs must be ({v}, 3, {9 * (j - 1)}), got {self.pose_dirs.shape}")
        if self.joint_regressor.shape != (j, v):
            raise BodyModelError(f"joint_regressor must be ({j}, {v}), got {self.joint_regressor.shape}")
        if self.skin_weights.shape != (v, j):
            raise BodyModelError(f"skin_weights must be ({v}, {j}), got {self.skin_weights.shape}")
        if (self.skin_weights < 0).any() or not np.allclose(self.skin_weights.sum(1), 1.0, atol=1e-6):
            raise BodyModelError("skin weight rows must be nonnegative and sum to 1")
        if not np.allclose(self.joint_regressor.sum(1), 1.0, atol=1e-6):
            raise BodyModelError("joint regressor rows must sum to 1")
        object.__setattr__(self, "order", kinematic_order(self.parents))
        if any(not 0 <= r < j for r in self.retained_joints):
            raise BodyModelError(f"retained joint ids out of range: {self.retained_joints}")

    @property
    def n_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def n_betas(self) -> int:
        return self.shape_dirs.shape[2]


def kinematic_order(parents: Sequence[int]) -> np.ndarray:
    """Joint indices ordered so that each parent precedes its children."""
    parents = np.asarray(parents, dtype=np.int64)
    j = len(parents)
    if j == 0 or parents[0] != -1:
        raise BodyModelError("joint 0 must be the root (parent -1)")
    depth = np.full(j, -1)
    depth[0] = 0
    for start in range(1, j):
        chain, k = [], start
        while depth[k] < 0:
            if k in chain:
                raise BodyModelError(f"kinematic tree has a cycle through joint {k}")
            chain.append(k)
            p = parents[k]
            if not 0 <= p < j or p == k:
                raise BodyModelError(f"joint {k} has invalid parent {p}")
            k = p
        for c in reversed(chain):
            depth[c] = depth[parents[c]] + 1
    return np.argsort(depth, kind="stable")


@dataclass(frozen=True)
class PoseParams:
    """Per-joint axis-angle rotations, ``(J, 3)`` radians; joint 0 is the global rotation."""

    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(t).all():
            raise BodyModelError("pose contains non-finite values")
        ang = np.linalg.norm(t, axis=1)
        wrap = ang >= 2.0 * np.pi
        if wrap.any():
            t = t.copy()
            t[wrap] *= (np.mod(ang[wrap], 2.0 * np.pi) / ang[wrap])[:, None]
        object.__setattr__(self, "theta", t)

    @classmethod
    def zeros(cls, n_joints: int) -> "PoseParams":
        return cls(np.zeros((n_joints, 3)))

    @property
    def n_joints(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True)
class VertexMask:
    included: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.included, dtype=bool).ravel()
        if not m.any():
            raise BodyModelError("vertex mask excludes every vertex")
        object.__setattr__(self, "included", m)

    @classmethod
    def all(cls, n: int) -> "VertexMask":
        return cls(np.ones(n, dtype=bool))

    @classmethod
    def load(cls, path: str | Path, n: int) -> "VertexMask":
        """Sidecar file: whitespace-separated 0/1 flags, or ``.npy``."""
        path = Path(path)
        arr = np.load(path) if path.suffix == ".npy" else np.loadtxt(path)
        if arr.size != n:
            raise BodyModelError(f"mask {path} has {arr.size} entries, expected {n}")
        return cls(arr.astype(bool))


@dataclass(frozen=True)
class DisplacementField:
    offsets: np.ndarray  # (V, 3) meters, unposed space
    pose: PoseParams
    clothing_type: str

    def __post_init__(self):
        d = np.asarray(self.offsets, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != 3:
            raise BodyModelError(f"offsets must be (V, 3), got {d.shape}")
        object.__setattr__(self, "offsets", d)
        clothing_index(self.clothing_type)


def skew(w: np.ndarray) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues(axis_angle) -> np.ndarray:
    w = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    angle = float(np.linalg.norm(w))
    if angle < 1e-8:
        return np.eye(3) + skew(w)
    k = skew(w / angle)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def batch_rodrigues(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64).reshape(-1, 3)
    return np.stack([rodrigues(w) for w in theta])


def shape_blend(spec: BodyModelSpec, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if beta.shape[0] != spec.n_betas:
        raise BodyModelError(f"beta has {beta.shape[0]} entries, model has {spec.n_betas}")
    return spec.shape_dirs @ beta


def pose_feature(pose: PoseParams) -> np.ndarray:
    rots = batch_rodrigues(pose.theta)
    return (rots[1:] - np.eye(3)).reshape(-1)


def pose_blend(spec: BodyModelSpec, pose: PoseParams) -> np.ndarray:
    _check_pose(spec, pose)
    return spec.pose_dirs @ pose_feature(pose)


def regress_joints(spec: BodyModelSpec, rest_vertices: np.ndarray) -> np.ndarray:
    return spec.joint_regressor @ np.asarray(rest_vertices, dtype=np.float64)


def _check_pose(spec: BodyModelSpec, pose: PoseParams) -> None:
    if pose.n_joints != spec.n_joints:
        raise BodyModelError(f"pose has {pose.n_joints} joints, model has {spec.n_joints}")


def joint_transforms(spec: BodyModelSpec, joints: np.ndarray, pose: PoseParams) -> np.ndarray:
    """``(J, 4, 4)`` skinning transforms: world transform of each joint composed with
    the inverse of its rest placement."""
    _check_pose(spec, pose)
    rots = batch_rodrigues(pose.theta)
    world = np.zeros((spec.n_joints, 4, 4))
    for j in spec.order:
        local = np.eye(4)
        local[:3, :3] = rots[j]
        p = spec.parents[j]
        local[:3, 3] = joints[j] - (joints[p] if p >= 0 else 0.0)
        world[j] = local if p < 0 else world[p] @ local
    rel = world.copy()
    rel[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], joints)
    return rel


def blended_transforms(spec: BodyModelSpec, joints: np.ndarray, pose: PoseParams) -> np.ndarray:
    return np.einsum("vj,jab->vab", spec.skin_weights, joint_transforms(spec, joints, pose))


def lbs_pose(spec: BodyModelSpec, rest_vertices: np.ndarray, pose: PoseParams, joints: np.ndarray | None = None) -> np.ndarray:
    """Skin ``rest_vertices``; joints default to the regression of ``rest_vertices``."""
    rest = np.asarray(rest_vertices, dtype=np.float64)
    if not pose.theta.any():
        return rest.copy()
    if joints is None:
        joints = regress_joints(spec, rest)
    t = blended_transforms(spec, joints, pose)
    return np.einsum("vab,vb->va", t[:, :3, :3], rest) + t[:, :3, 3]


def unpose(
    spec: BodyModelSpec,
    posed_vertices: np.ndarray,
    pose: PoseParams,
    rest_reference: np.ndarray,
    joints: np.ndarray | None = None,
) -> np.ndarray:
    """Invert each vertex's blended transform (built from ``rest_reference``'s joints)."""
    posed = np.asarray(posed_vertices, dtype=np.float64)
    if not pose.theta.any():
        return posed.copy()
    if joints is None:
        joints = regress_joints(spec, rest_reference)
    t = blended_transforms(spec, joints, pose)
    lin = t[:, :3, :3]
    det = np.linalg.det(lin)
    bad = np.flatnonzero(np.abs(det) <= 1e-10)
    if bad.size:
        raise BodyModelError(f"blended transform of vertex {bad[0]} is singular (det={det[bad[0]]:.3g})")
    return np.linalg.solve(lin, (posed - t[:, :3, 3])[..., None])[..., 0]


def extract_displacement(clothed_unposed: np.ndarray, minimal_unposed: np.ndarray, mask: VertexMask) -> np.ndarray:
    clothed = np.asarray(clothed_unposed, dtype=np.float64)
    minimal = np.asarray(minimal_unposed, dtype=np.float64)
    if clothed.shape != minimal.shape:
        raise BodyModelError(f"mesh shapes differ: {clothed.shape} vs {minimal.shape}")
    if mask.included.shape[0] != clothed.shape[0]:
        raise BodyModelError(f"mask covers {mask.included.shape[0]} vertices, meshes have {clothed.shape[0]}")
    d = clothed - minimal
    d[~mask.included] = 0.0
    return d


def minimal_rest(spec: BodyModelSpec, beta, pose: PoseParams) -> np.ndarray:
    return spec.template + shape_blend(spec, beta) + pose_blend(spec, pose)


def clothed_template(spec: BodyModelSpec, beta, pose: PoseParams, displacement: DisplacementField | np.ndarray) -> np.ndarray:
    offsets = displacement.offsets if isinstance(displacement, DisplacementField) else np.asarray(displacement)
    if offsets.shape != spec.template.shape:
        raise BodyModelError(f"offsets {offsets.shape} do not match template {spec.template.shape}")
    return minimal_rest(spec, beta, pose) + offsets


def pose_minimal(spec: BodyModelSpec, beta, pose: PoseParams) -> np.ndarray:
    rest = minimal_rest(spec, beta, pose)
    joints = regress_joints(spec, spec.template + shape_blend(spec, beta))
    return lbs_pose(spec, rest, pose, joints=joints)


def pose_clothed(spec: BodyModelSpec, beta, pose: PoseParams, displacement: DisplacementField | np.ndarray) -> np.ndarray:
    """Posed clothed body; the skeleton comes from ``template + shape_blend`` only."""
    rest = clothed_template(spec, beta, pose, displacement)
    joints = regress_joints(spec, spec.template + shape_blend(spec, beta))
    return lbs_pose(spec, rest, pose, joints=joints)


def retained_rotations(pose: PoseParams, retained: Sequence[int]) -> np.ndarray:
    """Flattened rotation matrices of the retained joints, ``(len(retained), 9)``."""
    return batch_rodrigues(pose.theta[list(retained)]).reshape(len(retained), 9)


def save_body_model(path: str | Path, spec: BodyModelSpec) -> None:
    meta = {
        "V": spec.n_vertices,
        "J": spec.n_joints,
        "n_beta": spec.n_betas,
        "parents": [int(p) for p in spec.parents],
        "retained_joints": [int(r) for r in spec.retained_joints],
    }
    container.save(
        path,
        meta,
        {
            "template": spec.template,
            "shape_dirs": spec.shape_dirs,
            "pose_dirs": spec.pose_dirs,
            "joint_regressor": spec.joint_regressor,
            "skin_weights": spec.skin_weights,
        },
    )


def load_body_model(path: str | Path) -> BodyModelSpec:
    meta, a = container.load(path)
    spec = BodyModelSpec(
        a["template"], a["shape_dirs"], a["pose_dirs"], a["joint_regressor"], a["skin_weights"],
        np.asarray(meta["parents"], dtype=np.int64), tuple(meta["retained_joints"]),
    )
    if spec.n_vertices != meta["V"] or spec.n_joints != meta["J"] or spec.n_betas != meta["n_beta"]:
        raise BodyModelError(f"{path}: header sizes disagree with array shapes")
    return spec


def toy_body_model(
    vertices: np.ndarray,
    n_joints: int = 14,
    n_betas: int = 4,
    seed: int = 0,
    pose_dir_scale: float = 0.002,
) -> BodyModelSpec:
    """A chain skeleton along +z for a tube-like mesh, with soft distance-based skin weights.

    Joint ``j`` sits on the axis at evenly spaced heights; its regressor row
    averages the vertices in its height band.
    """
    rng = np.random.default_rng(seed)
    v = np.asarray(vertices, dtype=np.float64)
    n = len(v)
    z = v[:, 2]
    lo, hi = z.min(), z.max()
    heights = lo + (hi - lo) * (np.arange(n_joints) + 0.5) / n_joints
    band = np.clip(((z - lo) / (hi - lo + 1e-12) * n_joints).astype(int), 0, n_joints - 1)
    reg = np.zeros((n_joints, n))
    for j in range(n_joints):
        members = np.flatnonzero(band == j)
        if members.size == 0:
            members = np.array([int(np.argmin(np.abs(z - heights[j])))])
        reg[j, members] = 1.0 / members.size
    dist = np.abs(z[:, None] - heights[None, :]) / ((hi - lo) / n_joints)
    w = np.exp(-2.0 * dist**2)
    w /= w.sum(1, keepdims=True)
    parents = np.arange(-1, n_joints - 1)
    shape_dirs = 0.01 * rng.standard_normal((n, 3, n_betas))
    pose_dirs = pose_dir_scale * rng.standard_normal((n, 3, 9 * (n_joints - 1)))
    return BodyModelSpec(v.copy(), shape_dirs, pose_dirs, reg, w, parents, tuple(range(n_joints)))
