"""Checkpoints: one container holding the architecture, weights and sampling hierarchy.

Header keys: ``arch`` (ArchConfig), ``params`` (ordered name/shape list),
``hierarchy`` (level counts and rates), ``offset_scale``, ``step`` and any
caller metadata under ``extra``. Weights are float64 arrays named
``param/<name>``; hierarchy arrays are prefixed ``hierarchy/``.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np

from .. import container
from ..autodiff import parameter
from ..mesh.io import hierarchy_arrays, hierarchy_from_arrays
from ..mesh.qem import SamplingHierarchy
from .model import (
    DECODER_FC_WIDTH,
    DECODER_WIDTHS,
    DISCRIMINATOR_WIDTHS,
    ENCODER_BOTTLENECK,
    ENCODER_WIDTHS,
    ArchConfig,
    CapeNet,
    GraphOperators,
)

FORMAT = "cape-checkpoint/1"


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(
    net: CapeNet,
    hierarchy: SamplingHierarchy,
    step: int = 0,
    extra: dict[str, Any] | None = None,
    extra_arrays: dict[str, np.ndarray] | None = None,
) -> bytes:
    h_meta, h_arrays = hierarchy_arrays(hierarchy, prefix="hierarchy/")
    meta = {
        "format": FORMAT,
        "arch": net.cfg.to_dict(),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in net.params.items()],
        "hierarchy": h_meta,
        "offset_scale": net.offset_scale,
        "step": int(step),
        "extra": extra or {},
    }
    arrays: dict[str, Any] = {f"param/{k}": v.data for k, v in net.params.items()}
    arrays["offset_mean"] = net.offset_mean
    arrays.update(h_arrays)
    for k, v in (extra_arrays or {}).items():
        arrays[f"extra/{k}"] = v
    return container.dumps(meta, arrays)


def save_checkpoint(path: str | Path, net: CapeNet, hierarchy: SamplingHierarchy, **kw) -> None:
    Path(path).write_bytes(checkpoint_bytes(net, hierarchy, **kw))


def load_checkpoint(path: str | Path) -> tuple[CapeNet, SamplingHierarchy, dict, dict[str, np.ndarray]]:
    """``(net, hierarchy, meta, extra_arrays)``."""
    try:
        meta, arrays = container.load(path)
    except (OSError, container.ContainerError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint (format {meta.get('format')!r})")
    cfg = ArchConfig(**meta["arch"])
    hierarchy = hierarchy_from_arrays(meta["hierarchy"], arrays, prefix="hierarchy/")
    params = {}
    for entry in meta["params"]:
        name = entry["name"]
        data = arrays.get(f"param/{name}")
        if data is None or list(data.shape) != entry["shape"]:
            raise CheckpointError(f"{path}: parameter {name!r} is missing or has the wrong shape")
        params[name] = parameter(np.array(data, dtype=np.float64), name=name)
    net = CapeNet(
        GraphOperators.from_hierarchy(hierarchy, cfg.laplacian), cfg, params, arrays["offset_mean"], meta["offset_scale"]
    )
    extra = {k[len("extra/"):]: v for k, v in arrays.items() if k.startswith("extra/")}
    return net, hierarchy, meta, extra


def architecture_manifest(net: CapeNet, seeds: dict | None = None) -> dict:
    """Level counts, channel widths, filter orders, seeds and layer shapes."""
    counts = net.graph.counts
    cfg = net.cfg
    params = {k: list(v.shape) for k, v in net.params.items()}
    return {
        "arch": cfg.to_dict(),
        "level_counts": counts,
        "widths": {
            "encoder": [cfg.width(c) for c in ENCODER_WIDTHS],
            "encoder_bottleneck": cfg.width(ENCODER_BOTTLENECK),
            "decoder_fc": cfg.width(DECODER_FC_WIDTH),
            "decoder": [cfg.width(c) for c in DECODER_WIDTHS],
            "discriminator": [cfg.width(c) for c in DISCRIMINATOR_WIDTHS] if cfg.use_discriminator else [],
        },
        "k_orders": {"generator": cfg.k_generator, "discriminator": cfg.k_discriminator},
        "seeds": dict(seeds or {}),
        "latent_dim": net.cfg.latent_dim,
        "decoder_input_dim": net.params["g.dec.fc.w"].shape[0],
        "discriminator_scores": counts[4] if net.cfg.use_discriminator and len(counts) > 4 else None,
        "n_generator_params": int(sum(v.data.size for v in net.generator_params().values())),
        "n_discriminator_params": int(sum(v.data.size for v in net.discriminator_params().values())),
        "params": params,
    }
