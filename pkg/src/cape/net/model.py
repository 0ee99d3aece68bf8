"""Conditional VAE-GAN over mesh displacement fields.

Generator: unconditioned graph-conv encoder to an 18-d Gaussian latent, and a
decoder that sees the pose/clothing embeddings both in its latent input and
tiled onto every node of every conditional residual block. Discriminator:
patchwise, one sigmoid score per vertex of the coarsest level.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from ..autodiff import Tensor, no_grad, ops
from ..mesh.laplacian import combinatorial_laplacian
from ..mesh.qem import SamplingHierarchy
from . import layers as L

# channel widths at full scale
ENCODER_WIDTHS = (64, 64, 128, 128, 256, 256, 512, 512)
ENCODER_BOTTLENECK = 64
DECODER_FC_WIDTH = 64
DECODER_WIDTHS = (512, 512, 256, 256, 128, 128, 64, 64)
DISCRIMINATOR_WIDTHS = (64, 64, 128, 128)
LOGVAR_CLAMP = 20.0
GN_MAX_GROUPS = 32

CONDITIONING_MODES = ("combined", "latent", "tile")


@dataclass
class ArchConfig:
    width_scale: float = 1.0
    latent_dim: int = 18
    pose_joints: int = 14
    n_clothing: int = 4
    pose_hidden: int = 63
    pose_embed: int = 24
    clothing_embed: int = 8
    k_generator: int = 2
    k_discriminator: int = 3
    use_resblock: bool = True
    use_discriminator: bool = True
    conditioning: str = "combined"
    zero_init_final: bool = True
    laplacian: str = "normalized"

    def __post_init__(self):
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"conditioning must be one of {CONDITIONING_MODES}, got {self.conditioning!r}")
        if self.width_scale <= 0:
            raise ValueError("width_scale must be positive")

    @property
    def max_groups(self) -> int:
        # narrow networks keep the full-width channels-per-group ratio
        return max(1, int(round(GN_MAX_GROUPS * min(self.width_scale, 1.0))))

    def width(self, w: int) -> int:
        return max(1, int(round(w * self.width_scale)))

    @property
    def cond_dim(self) -> int:
        return self.pose_embed + self.clothing_embed

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class GraphOperators:
    """Rescaled Laplacians per level and the sampling matrices between levels."""

    counts: list[int]
    laplacians: list[sp.csr_matrix] = field(repr=False)
    down: list[sp.csr_matrix] = field(repr=False)  # down[k]: level k -> k + 1
    up: list[sp.csr_matrix] = field(repr=False)  # up[k]: level k + 1 -> k

    @classmethod
    def from_hierarchy(cls, h: SamplingHierarchy, mode: str = "normalized") -> "GraphOperators":
        laps = [combinatorial_laplacian(h.topology(i), mode).rescaled for i in range(len(h.counts))]
        return cls(
            list(h.counts),
            laps,
            [lvl.down.tocsr() for lvl in h.levels],
            [lvl.up.tocsr() for lvl in h.levels],
        )


def init_params(cfg: ArchConfig, counts: list[int], rng: np.random.Generator) -> dict[str, Tensor]:
    """All generator (``g.``) and discriminator (``d.``) parameters."""
    if len(counts) < 4:
        raise ValueError("the generator needs a hierarchy with at least 3 down-sampling levels")
    s = L.ParamStore(rng)
    w = cfg.width
    kg, kd = cfg.k_generator, cfg.k_discriminator
    n_pose = 9 * cfg.pose_joints

    for tag in ("g", "d") if cfg.use_discriminator else ("g",):
        L.init_linear(s, f"{tag}.cond.pose1", n_pose, cfg.pose_hidden)
        L.init_linear(s, f"{tag}.cond.pose2", cfg.pose_hidden, cfg.pose_embed)
        L.init_linear(s, f"{tag}.cond.cloth", cfg.n_clothing, cfg.clothing_embed)

    enc = [w(c) for c in ENCODER_WIDTHS]
    c_in = 3
    for i, c in enumerate(enc):
        L.init_cheb(s, f"g.enc.conv{i}", c_in, c, kg)
        c_in = c
    bott = w(ENCODER_BOTTLENECK)
    L.init_cheb(s, "g.enc.bottleneck", c_in, bott, 0)
    L.init_linear(s, "g.enc.mu", bott * counts[3], cfg.latent_dim)
    L.init_linear(s, "g.enc.logvar", bott * counts[3], cfg.latent_dim)

    z_in = cfg.latent_dim + (cfg.cond_dim if cfg.conditioning in ("combined", "latent") else 0)
    tile = cfg.cond_dim if cfg.conditioning in ("combined", "tile") else 0
    fc_w = w(DECODER_FC_WIDTH)
    L.init_linear(s, "g.dec.fc", z_in, fc_w * counts[3])
    dec = [w(c) for c in DECODER_WIDTHS]
    L.init_cheb(s, "g.dec.proj", fc_w, dec[0], 0)
    c_in = dec[0]
    for i, c in enumerate(dec):
        if cfg.use_resblock:
            L.init_res_block(s, f"g.dec.block{i}", c_in + tile, c, kg)
        else:
            L.init_cheb(s, f"g.dec.block{i}", c_in + tile, c, kg)
        c_in = c
    L.init_cheb(s, "g.dec.out", c_in, 3, kg, zero=cfg.zero_init_final)

    if cfg.use_discriminator:
        c_in = 3 + cfg.cond_dim
        for i, c in enumerate(w(c) for c in DISCRIMINATOR_WIDTHS):
            L.init_cheb(s, f"d.conv{i}", c_in, c, kd)
            c_in = c
        L.init_cheb(s, "d.out", c_in, 1, kd)
    return s.params


class CapeNet:
    """Generator and discriminator over standardized displacements.

    The network sees ``(x - offset_mean) / offset_scale``; ``reconstruct`` and
    ``generate`` map back to metres.
    """

    def __init__(
        self,
        graph: GraphOperators,
        cfg: ArchConfig,
        params: Mapping[str, Tensor],
        offset_mean: np.ndarray | None = None,
        offset_scale: float = 1.0,
    ):
        self.graph = graph
        self.cfg = cfg
        self.params = dict(params)
        self.offset_mean = np.zeros((graph.counts[0], 3)) if offset_mean is None else np.asarray(offset_mean, dtype=np.float64)
        if self.offset_mean.shape != (graph.counts[0], 3):
            raise ValueError(f"offset mean {self.offset_mean.shape} does not match {graph.counts[0]} vertices")
        if not offset_scale > 0:
            raise ValueError("offset_scale must be positive")
        self.offset_scale = float(offset_scale)

    def set_standardization(self, offsets: np.ndarray, mask: np.ndarray | None = None) -> None:
        """Fit the per-vertex mean and one global scale on training displacements ``(N, V, 3)``."""
        x = np.asarray(offsets, dtype=np.float64)
        m = np.ones(x.shape[1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        self.offset_mean = x.mean(axis=0)
        self.offset_mean[~m] = 0.0
        scale = float(np.sqrt(np.mean((x[:, m] - self.offset_mean[m]) ** 2))) if len(x) and m.any() else 0.0
        self.offset_scale = scale if scale > 0 else 1.0

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.offset_mean) / self.offset_scale

    def destandardize(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y) * self.offset_scale + self.offset_mean

    @classmethod
    def create(cls, hierarchy: SamplingHierarchy, cfg: ArchConfig, seed: int = 0) -> "CapeNet":
        graph = GraphOperators.from_hierarchy(hierarchy, cfg.laplacian)
        return cls(graph, cfg, init_params(cfg, graph.counts, np.random.default_rng(seed)))

    @property
    def n_vertices(self) -> int:
        return self.graph.counts[0]

    def generator_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("g.")}

    def discriminator_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("d.")}

    # -- conditions -------------------------------------------------------
    def embed_conditions(self, pose_rot: Tensor, clothing: Tensor, net: str = "g") -> tuple[Tensor, Tensor]:
        """``pose_rot``: ``(B, 9 * joints)`` flattened rotations; ``clothing``: ``(B, 4)`` one-hot."""
        p = self.params
        h = ops.leaky_relu(L.linear(p, f"{net}.cond.pose1", pose_rot))
        z_pose = L.linear(p, f"{net}.cond.pose2", h)
        z_cloth = L.linear(p, f"{net}.cond.cloth", clothing)
        return z_pose, z_cloth

    # -- generator --------------------------------------------------------
    def encode(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.data.ndim != 3 or x.shape[1:] != (self.n_vertices, 3):
            raise ValueError(f"expected (B, {self.n_vertices}, 3) displacements, got {x.shape}")
        p, g, k = self.params, self.graph, self.cfg.k_generator
        # (conv index, level) pairs; down-sample after convs 0, 2 and 4
        h = x
        level = 0
        for i in range(len(ENCODER_WIDTHS)):
            h = L.conv_block(p, f"g.enc.conv{i}", g.laplacians[level], h, k)
            if i in (0, 2, 4):
                h = ops.sparse_dense_matmul(g.down[level], h)
                level += 1
        h = L.cheb_conv(p, "g.enc.bottleneck", g.laplacians[level], h, 0)
        flat = ops.reshape(h, (h.shape[0], -1))
        mu = L.linear(p, "g.enc.mu", flat)
        logvar = ops.clamp(L.linear(p, "g.enc.logvar", flat), -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, logvar

    @staticmethod
    def reparameterize(mu: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
        logvar = ops.clamp(logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)
        std = ops.exp(ops.scale(logvar, 0.5))
        return ops.add(mu, ops.mul(std, Tensor(eps)))

    def decode(self, z: Tensor, z_pose: Tensor, z_cloth: Tensor) -> Tensor:
        p, g, cfg = self.params, self.graph, self.cfg
        k = cfg.k_generator
        b = z.shape[0]
        cond = ops.concat([z_pose, z_cloth], axis=-1)
        z_in = ops.concat([z, cond], axis=-1) if cfg.conditioning in ("combined", "latent") else z
        level = 3
        h = ops.reshape(L.linear(p, "g.dec.fc", z_in), (b, g.counts[level], -1))
        h = L.cheb_conv(p, "g.dec.proj", g.laplacians[level], h, 0)
        tile = cfg.conditioning in ("combined", "tile")
        for i in range(len(DECODER_WIDTHS)):
            lap = g.laplacians[level]
            hin = ops.concat([h, ops.tile_broadcast(cond, h.shape[1])], axis=-1) if tile else h
            if cfg.use_resblock:
                h = L.res_block(p, f"g.dec.block{i}", lap, hin, k, cfg.max_groups)
            else:
                h = L.conv_block(p, f"g.dec.block{i}", lap, hin, k)
            if i in (1, 3, 5):
                level -= 1
                h = ops.sparse_dense_matmul(g.up[level], h)
        return L.cheb_conv(p, "g.dec.out", g.laplacians[0], h, k)

    # -- discriminator ----------------------------------------------------
    def discriminate(self, x: Tensor, z_pose: Tensor, z_cloth: Tensor) -> Tensor:
        """Per-patch realness in (0, 1): ``(B, n_coarsest)``."""
        if not self.cfg.use_discriminator:
            raise RuntimeError("network was built without a discriminator")
        p, g, k = self.params, self.graph, self.cfg.k_discriminator
        if len(g.counts) < 5:
            raise ValueError("the discriminator needs a hierarchy with 4 down-sampling levels")
        cond = ops.concat([z_pose, z_cloth], axis=-1)
        h = ops.concat([x, ops.tile_broadcast(cond, x.shape[1])], axis=-1)
        for i in range(len(DISCRIMINATOR_WIDTHS)):
            h = L.conv_block(p, f"d.conv{i}", g.laplacians[i], h, k)
            h = ops.sparse_dense_matmul(g.down[i], h)
        logits = L.cheb_conv(p, "d.out", g.laplacians[4], h, k)
        return ops.sigmoid(ops.reshape(logits, (logits.shape[0], logits.shape[1])))

    def reconstruct(self, x: np.ndarray, pose_rot: np.ndarray, clothing: np.ndarray) -> np.ndarray:
        """Deterministic auto-encoding of metric displacements through the posterior mean."""
        with no_grad():
            mu, _ = self.encode(Tensor(self.standardize(x)))
            return self.generate(mu.data, pose_rot, clothing)

    def encode_offsets(self, x: np.ndarray) -> np.ndarray:
        """Posterior means ``(B, latent_dim)`` of metric displacements."""
        with no_grad():
            return self.encode(Tensor(self.standardize(x)))[0].data

    def generate(self, z: np.ndarray, pose_rot: np.ndarray, clothing: np.ndarray) -> np.ndarray:
        """Metric displacements ``(B, V, 3)`` for latent codes and conditions."""
        with no_grad():
            zp, zc = self.embed_conditions(Tensor(np.atleast_2d(pose_rot)), Tensor(np.atleast_2d(clothing)))
            return self.destandardize(self.decode(Tensor(np.atleast_2d(z)), zp, zc).data)
