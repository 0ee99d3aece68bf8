from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class PCACodec:
    """Linear baseline over flattened masked displacements."""

    mean: np.ndarray  # (D,)
    components: np.ndarray  # (k, D), orthonormal rows
    mask: np.ndarray  # (V,) bool
    n_vertices: int

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def _flatten(self, offsets: np.ndarray) -> np.ndarray:
        x = np.asarray(offsets, dtype=np.float64)
        return x[:, self.mask, :].reshape(len(x), -1)

    def encode(self, offsets: np.ndarray) -> np.ndarray:
        return (self._flatten(offsets) - self.mean) @ self.components.T

    def decode(self, codes: np.ndarray) -> np.ndarray:
        flat = codes @ self.components + self.mean
        out = np.zeros((len(codes), self.n_vertices, 3))
        out[:, self.mask, :] = flat.reshape(len(codes), -1, 3)
        return out

    def reconstruct(self, offsets: np.ndarray) -> np.ndarray:
        return self.decode(self.encode(offsets))


def pca_baseline(train_offsets: np.ndarray, mask: np.ndarray | None = None, n_components: int = 18) -> PCACodec:
    x = np.asarray(train_offsets, dtype=np.float64)
    n, v, _ = x.shape
    m = np.ones(v, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if n < n_components:
        raise ValueError(f"need at least {n_components} samples, got {n}")
    flat = x[:, m, :].reshape(n, -1)
    mean = flat.mean(axis=0)
    _, sv, vt = np.linalg.svd(flat - mean, full_matrices=False)
    tol = sv.max(initial=0.0) * max(flat.shape) * np.finfo(float).eps
    rank = int((sv > tol).sum())
    k = n_components
    if rank < n_components:
        warnings.warn(f"data has rank {rank}; keeping {rank} of {n_components} components", RuntimeWarning)
        k = rank
    return PCACodec(mean, vt[:k], m, v)
