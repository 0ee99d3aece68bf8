from __future__ import annotations

import numpy as np


def per_vertex_errors(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Euclidean distance per (sample, masked vertex), pooled into one flat array."""
    d = np.linalg.norm(np.asarray(pred) - np.asarray(gt), axis=-1)
    if mask is not None:
        d = d[..., np.asarray(mask, dtype=bool)]
    return d.ravel()


def error_summary(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> dict[str, float]:
    d = per_vertex_errors(pred, gt, mask)
    return {"mean": float(d.mean()), "median": float(np.median(d))}


def eval_aligned_mse(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> tuple[float, float, np.ndarray]:
    """Minimise ``mean_i |s (v_i + t) - g_i|^2`` over scale ``s`` and translation ``t``.

    With ``u = s t`` the objective is linear least squares in ``(s, u)``: the
    optimal ``u`` matches centroids for any ``s``, leaving a 1D quadratic in
    ``s``. Returns ``(mse, s, t)``.
    """
    v = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if v.shape != g.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {g.shape}")
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            raise ValueError("mask selects no vertices")
        v, g = v[m], g[m]
    if len(v) == 0:
        raise ValueError("no vertices to align")
    vc, gc = v.mean(axis=0), g.mean(axis=0)
    dv, dg = v - vc, g - gc
    var = float((dv * dv).sum())
    if var == 0.0:
        s = 1.0
    else:
        s = float((dv * dg).sum()) / var
    if s == 0.0:
        raise ValueError("optimal scale is zero; translation is undefined")
    t = gc / s - vc
    r = s * (v + t) - g
    return float((r * r).sum(axis=1).mean()), s, t
