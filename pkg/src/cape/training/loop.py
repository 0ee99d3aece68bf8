"""Adversarial VAE training with alternating discriminator / generator steps."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

import numpy as np

from ..autodiff import SGDMomentum, Tensor, backward, ops
from ..data import Dataset
from ..net.model import ArchConfig, CapeNet
from .losses import LossWeights, loss_edge, loss_gan, loss_kl, loss_recon, loss_total
from .metrics import error_summary

ABLATIONS = ("no_discriminator", "no_resblock", "no_edge_loss")
# row labels of the ablation table
ABLATION_LABELS = {"no_discriminator": "Discriminator", "no_resblock": "Res-block", "no_edge_loss": "Edge loss"}


class NumericAbort(RuntimeError):
    def __init__(self, epoch: int, batch: int, parts: dict[str, float]):
        self.epoch, self.batch, self.parts = epoch, batch, parts
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {parts}")


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 16
    lr_init: float = 2e-3
    warmup_increment: float = 2e-3
    # epochs 0 .. warmup_epochs-1 ramp up; decay starts at epoch warmup_epochs
    warmup_epochs: int = 4
    decay: float = 0.99
    momentum: float = 0.9
    weight_decay: float = 2e-3
    k_generator: int = 2
    k_discriminator: int = 3
    gamma_edge: float = 1.0
    gamma_kl: float = 1e-2
    gamma_gan: float = 1e-2
    edge_mode: str = "vector"
    ablations: tuple[str, ...] = ()
    width_scale: float = 1.0
    laplacian: str = "normalized"
    conditioning: str = "combined"
    zero_init_final: bool = True
    loss_scale: float = 1.0
    clip_grad_norm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.ablations = tuple(self.ablations)
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablations {sorted(unknown)}; choose from {ABLATIONS}")
        # lr_init = 0 with no warm-up disables learning
        if self.lr_init < 0 or self.decay <= 0:
            raise ValueError("lr_init must be nonnegative and decay positive")
        if self.warmup_increment < 0 or self.warmup_epochs < 0:
            raise ValueError("warm-up settings must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablations"] = list(self.ablations)
        return d

    @property
    def weights(self) -> LossWeights:
        return LossWeights(
            0.0 if "no_edge_loss" in self.ablations else self.gamma_edge,
            self.gamma_kl,
            0.0 if "no_discriminator" in self.ablations else self.gamma_gan,
        )

    def arch(self, pose_joints: int = 14) -> ArchConfig:
        return ArchConfig(
            width_scale=self.width_scale,
            pose_joints=pose_joints,
            k_generator=self.k_generator,
            k_discriminator=self.k_discriminator,
            use_resblock="no_resblock" not in self.ablations,
            use_discriminator="no_discriminator" not in self.ablations and self.gamma_gan > 0,
            conditioning=self.conditioning,
            zero_init_final=self.zero_init_final,
            laplacian=self.laplacian,
        )


def clip_gradients(params, max_norm: float) -> float:
    norm = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None))
    if norm > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad *= max_norm / norm
    return norm


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    if epoch < cfg.warmup_epochs:
        return cfg.lr_init + epoch * cfg.warmup_increment
    peak = cfg.lr_init + (cfg.warmup_epochs - 1) * cfg.warmup_increment if cfg.warmup_epochs else cfg.lr_init
    return peak * cfg.decay ** (epoch - cfg.warmup_epochs + 1)


@dataclass
class Batch:
    x: np.ndarray
    pose_rot: np.ndarray
    clothing: np.ndarray


def iterate_batches(ds: Dataset, batch_size: int, rng: np.random.Generator | None) -> Iterator[Batch]:
    order = np.arange(len(ds)) if rng is None else rng.permutation(len(ds))
    rot = ds.pose_rotations()
    onehot = ds.clothing_onehot()
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield Batch(ds.offsets[idx], rot[idx], onehot[idx])


@dataclass
class Trainer:
    net: CapeNet
    cfg: TrainConfig
    incidence: object = field(repr=False)
    mask: np.ndarray = field(repr=False)
    epoch: int = 0

    def __post_init__(self):
        self.rng = np.random.default_rng([self.cfg.seed, 1])
        self.opt_g = SGDMomentum(self.net.generator_params(), self.cfg.momentum, self.cfg.weight_decay)
        self.opt_d = SGDMomentum(self.net.discriminator_params(), self.cfg.momentum, self.cfg.weight_decay)

    @classmethod
    def create(cls, ds: Dataset, hierarchy, cfg: TrainConfig) -> "Trainer":
        """``ds`` is the training split; it also fixes the displacement standardization."""
        net = CapeNet.create(hierarchy, cfg.arch(len(ds.retained_joints)), seed=cfg.seed)
        net.set_standardization(ds.offsets, ds.mask)
        return cls(net, cfg, ds.topology.incidence(), ds.mask)

    @property
    def adversarial(self) -> bool:
        return self.net.cfg.use_discriminator and self.cfg.weights.gamma_gan > 0

    def train_epoch(self, ds: Dataset) -> dict:
        if ds.n_vertices != self.net.n_vertices:
            raise ValueError(f"dataset has {ds.n_vertices} vertices, network expects {self.net.n_vertices}")
        cfg, net = self.cfg, self.net
        weights = cfg.weights
        lr = lr_schedule(self.epoch, cfg)
        sums: dict[str, float] = {}
        n_seen = 0
        errors = []
        for bi, batch in enumerate(iterate_batches(ds, cfg.batch_size, self.rng)):
            b = len(batch.x)
            x = Tensor(net.standardize(batch.x))
            pose, cloth = Tensor(batch.pose_rot), Tensor(batch.clothing)
            eps = self.rng.standard_normal((b, net.cfg.latent_dim))

            mu, logvar = net.encode(x)
            z_pose, z_cloth = net.embed_conditions(pose, cloth, "g")
            x_hat = net.decode(net.reparameterize(mu, logvar, eps), z_pose, z_cloth)

            parts = {
                "recon": loss_recon(x_hat, x),
                "edge": loss_edge(x_hat, x, self.incidence, cfg.edge_mode),
                "kl": loss_kl(mu, logvar),
            }
            if self.adversarial:
                dz_pose, dz_cloth = net.embed_conditions(pose, cloth, "d")
                real = net.discriminate(x, dz_pose, dz_cloth)
                fake = net.discriminate(x_hat.detach(), dz_pose, dz_cloth)
                d_loss, _ = loss_gan(real, fake)
                self._check(d_loss, bi, {**parts, "d": d_loss})
                self.opt_d.zero_grad()
                backward(d_loss)
                self.opt_d.step(lr)
                dz_pose, dz_cloth = net.embed_conditions(pose, cloth, "d")
                _, parts["gan"] = loss_gan(None, net.discriminate(x_hat, dz_pose, dz_cloth))
                parts["d"] = d_loss
            total = loss_total(parts, weights)
            self._check(total, bi, parts)
            self.opt_g.zero_grad()
            backward(ops.scale(total, cfg.loss_scale) if cfg.loss_scale != 1.0 else total)
            if cfg.clip_grad_norm > 0:
                clip_gradients(self.opt_g.params.values(), cfg.clip_grad_norm)
            self.opt_g.step(lr)
            self.opt_d.zero_grad()

            parts["total"] = total
            for k, t in parts.items():
                sums[k] = sums.get(k, 0.0) + float(t.data) * b
            n_seen += b
            err = np.linalg.norm(x_hat.data - x.data, axis=-1)[:, self.mask] * net.offset_scale
            errors.append(err.ravel())

        metrics = {"epoch": self.epoch, "lr": lr}
        metrics.update({k: v / max(n_seen, 1) for k, v in sums.items()})
        if errors:
            err = np.concatenate(errors)
            metrics["train_error_mean"] = float(err.mean())
            metrics["train_error_median"] = float(np.median(err))
        self.epoch += 1
        return metrics

    def _check(self, loss: Tensor, batch: int, parts: dict) -> None:
        if not math.isfinite(float(loss.data)):
            raise NumericAbort(self.epoch, batch, {k: float(v.data) for k, v in parts.items()})

    def reconstruct(self, ds: Dataset, batch_size: int = 64) -> np.ndarray:
        out = [self.net.reconstruct(b.x, b.pose_rot, b.clothing) for b in iterate_batches(ds, batch_size, None)]
        return np.concatenate(out) if out else np.zeros((0, ds.n_vertices, 3))

    def evaluate(self, ds: Dataset) -> dict[str, float]:
        return error_summary(self.reconstruct(ds), ds.offsets, ds.mask)
