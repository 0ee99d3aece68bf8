"""Training objectives on ``(B, V, 3)`` displacement tensors."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from ..autodiff import Tensor, ops

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Defaults are implementation choices; the source gives no values."""

    gamma_edge: float = 1.0
    gamma_kl: float = 1e-2
    gamma_gan: float = 1e-2

    def __post_init__(self):
        for name in ("gamma_edge", "gamma_kl", "gamma_gan"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


def _check_same(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def loss_recon(x_hat: Tensor, x: Tensor) -> Tensor:
    """L1 norm over all vertex coordinates, averaged over the batch."""
    _check_same(x_hat, x)
    return ops.scale(ops.sum(ops.abs(ops.sub(x_hat, x))), 1.0 / x.shape[0])


def loss_edge(x_hat: Tensor, x: Tensor, incidence: sp.csr_matrix, mode: str = "vector") -> Tensor:
    """Mean over edges (and batch) of the edge mismatch.

    ``mode="vector"``: ``|e - e_hat|`` of the 3D edge vectors.
    ``mode="length"``: ``| |e| - |e_hat| |`` of the edge lengths.
    """
    _check_same(x_hat, x)
    if mode == "vector":
        per_edge = ops.per_row_l2_norm(ops.sparse_dense_matmul(incidence, ops.sub(x, x_hat)))
    elif mode == "length":
        e = ops.per_row_l2_norm(ops.sparse_dense_matmul(incidence, x))
        e_hat = ops.per_row_l2_norm(ops.sparse_dense_matmul(incidence, x_hat))
        per_edge = ops.abs(ops.sub(e, e_hat))
    else:
        raise ValueError(f"unknown edge loss mode {mode!r}")
    return ops.mean(per_edge)


def loss_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL to the standard normal prior, summed over latent dims, averaged over the batch."""
    _check_same(mu, logvar)
    terms = ops.sub(ops.add(ops.exp(logvar), ops.square(mu)), ops.add(logvar, Tensor(np.ones(mu.shape))))
    return ops.scale(ops.sum(terms), 0.5 / mu.shape[0])


def loss_gan(scores_real: Tensor | None, scores_fake: Tensor) -> tuple[Tensor | None, Tensor]:
    """``(d_loss, g_loss)`` with the non-saturating generator objective.

    ``d_loss`` is ``None`` when ``scores_real`` is not given.
    """
    lo, hi = PROB_CLAMP, 1.0 - PROB_CLAMP
    fake = ops.clamp(scores_fake, lo, hi)
    g_loss = ops.scale(ops.mean(ops.log(fake)), -1.0)
    if scores_real is None:
        return None, g_loss
    real = ops.clamp(scores_real, lo, hi)
    d_loss = ops.scale(
        ops.add(ops.mean(ops.log(real)), ops.mean(ops.log(ops.sub(Tensor(np.ones(fake.shape)), fake)))),
        -1.0,
    )
    return d_loss, g_loss


def loss_total(parts: Mapping[str, Tensor], weights: LossWeights) -> Tensor:
    """``recon + g_edge * edge + g_kl * kl + g_gan * gan``; absent parts count as zero."""
    total = parts["recon"]
    for key, gamma in (("edge", weights.gamma_edge), ("kl", weights.gamma_kl), ("gan", weights.gamma_gan)):
        if gamma and key in parts:
            total = ops.add(total, ops.scale(parts[key], gamma))
    return total
