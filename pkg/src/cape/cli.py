"""Command-line entry point: ``cape {train,eval,sample,repose,ablate,export}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import container, report
from .body import (
    CLOTHING_TYPES,
    BodyModelError,
    BodyModelSpec,
    PoseParams,
    VertexMask,
    clothing_onehot,
    load_body_model,
    pose_clothed,
    retained_rotations,
    toy_body_model,
)
from .data import Dataset, DatasetError, SyntheticSpec, generate, load_external, save_dataset
from .mesh.io import save_hierarchy, write_mesh, write_ply
from .mesh.qem import SamplingHierarchy, build_sampling_hierarchy
from .mesh.topology import TopologyError
from .net.checkpoint import CheckpointError, architecture_manifest, checkpoint_bytes, load_checkpoint
from .net.model import CapeNet
from .training.loop import ABLATION_LABELS, ABLATIONS, NumericAbort, TrainConfig, Trainer
from .training.metrics import error_summary, eval_aligned_mse, per_vertex_errors
from .training.pca import PCACodec, pca_baseline

log = logging.getLogger("cape")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SAMPLING_RATES = (2, 2, 2, 2)
MODEL_LABEL = "model"
PCA_LABEL = "PCA"

# desk-scale training preset applied to synthetic runs; explicit config keys win
SYNTHETIC_PRESET = {"epochs": 200, "width_scale": 0.125, "loss_scale": 0.04, "clip_grad_norm": 100.0}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    checkpoint_every: int = 0
    eval_every: int = 10

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "synthetic": self.synthetic.to_dict(),
            "checkpoint_every": self.checkpoint_every,
            "eval_every": self.eval_every,
        }


def build_run_config(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    train = dict(raw.get("train", {}))
    if getattr(args, "synthetic", False):
        train = {**SYNTHETIC_PRESET, **train}
    synth = dict(raw.get("synthetic", {}))
    if args.seed is not None:
        train["seed"] = args.seed
        synth["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        train["epochs"] = args.epochs
    if getattr(args, "ablate", None):
        train["ablations"] = sorted(set(train.get("ablations", [])) | set(args.ablate))
    try:
        cfg = RunConfig(
            TrainConfig.from_dict(train),
            SyntheticSpec(**synth),
            int(raw.get("checkpoint_every", 0)),
            int(raw.get("eval_every", 10)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.checkpoint_every < 0 or cfg.eval_every < 1:
        raise ConfigError("checkpoint_every must be >= 0 and eval_every >= 1")
    return cfg


def build_id() -> str:
    """Content hash of the package sources, stable across checkouts of the same code."""
    h = hashlib.sha1()
    root = Path(__file__).parent
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def write_manifest(out: Path, command: str, argv: Sequence[str], cfg: RunConfig | None, ds: Dataset | None, **extra) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": cfg.to_dict() if cfg else None,
        "seed": cfg.train.seed if cfg else extra.pop("seed", None),
        "build_id": build_id(),
        "dataset_fingerprint": ds.fingerprint() if ds is not None else None,
        "out_dir": str(out),
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_data(args: argparse.Namespace, cfg: RunConfig) -> Dataset:
    if getattr(args, "dataset_dir", None):
        return load_external(args.dataset_dir)
    if getattr(args, "synthetic", False):
        return generate(cfg.synthetic)
    raise DatasetError("no dataset: pass --synthetic or --dataset-dir")


def build_hierarchy(ds: Dataset) -> SamplingHierarchy:
    if not np.abs(ds.positions).any():
        raise DatasetError("dataset topology has no vertex positions; the sampling hierarchy needs rest geometry")
    return build_sampling_hierarchy(ds.topology, ds.positions, SAMPLING_RATES)


def require_splits(ds: Dataset) -> tuple[Dataset, Dataset]:
    train, test = ds.split("train"), ds.split("test")
    if len(train) == 0:
        raise DatasetError("dataset has no training records")
    return train, test


def model_label(cfg: TrainConfig) -> str:
    if not cfg.ablations:
        return MODEL_LABEL
    return " + ".join(ABLATION_LABELS[a] for a in cfg.ablations)


@dataclass
class TrainResult:
    trainer: Trainer
    metrics: list[dict]
    pca: PCACodec | None


def fit(
    train: Dataset,
    test: Dataset,
    hierarchy: SamplingHierarchy,
    cfg: RunConfig,
    on_epoch: Callable[[dict, Trainer], None] | None = None,
) -> TrainResult:
    trainer = Trainer.create(train, hierarchy, cfg.train)
    metrics = []
    for epoch in range(cfg.train.epochs):
        m = trainer.train_epoch(train)
        if len(test) and ((epoch + 1) % cfg.eval_every == 0 or epoch == cfg.train.epochs - 1):
            ev = trainer.evaluate(test)
            m["test_error_mean"], m["test_error_median"] = ev["mean"], ev["median"]
        metrics.append(m)
        if on_epoch:
            on_epoch(m, trainer)
    pca = pca_baseline(train.offsets, train.mask, trainer.net.cfg.latent_dim) if len(train) >= trainer.net.cfg.latent_dim else None
    return TrainResult(trainer, metrics, pca)


def evaluation_rows(net: CapeNet, pca: PCACodec | None, ds: Dataset, mask: np.ndarray, label: str = MODEL_LABEL) -> dict:
    """Per-vertex error summaries and aligned MSE on clothed rest meshes, keyed by row label."""
    preds = {label: reconstruct(net, ds)}
    if pca is not None:
        preds[PCA_LABEL] = pca.reconstruct(ds.offsets)
    rows = {}
    for name, pred in preds.items():
        summary = error_summary(pred, ds.offsets, mask)
        aligned = [eval_aligned_mse(ds.positions + p, ds.positions + g, mask)[0] for p, g in zip(pred, ds.offsets)]
        summary["aligned_mse"] = float(np.mean(aligned))
        summary["errors"] = per_vertex_errors(pred, ds.offsets, mask)
        rows[name] = summary
    return rows


def reconstruct(net: CapeNet, ds: Dataset, batch: int = 64) -> np.ndarray:
    rot, onehot = ds.pose_rotations(), ds.clothing_onehot()
    out = [net.reconstruct(ds.offsets[i : i + batch], rot[i : i + batch], onehot[i : i + batch]) for i in range(0, len(ds), batch)]
    return np.concatenate(out) if out else np.zeros((0, ds.n_vertices, 3))


def write_error_report(out: Path, name: str, rows: dict) -> None:
    report.write_table(
        out / f"{name}.csv",
        ("model", "mean_mm", "median_mm", "aligned_mse"),
        [(k, r["mean"] * 1000, r["median"] * 1000, r["aligned_mse"]) for k, r in rows.items()],
    )
    report.plot_error_histogram(out / f"{name}_errors.png", {k: r["errors"] for k, r in rows.items()})


# -- commands -------------------------------------------------------------
def cmd_train(args: argparse.Namespace, argv: Sequence[str]) -> int:
    cfg = build_run_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_data(args, cfg)
    write_manifest(out, "train", argv, cfg, ds)
    train, test = require_splits(ds)
    hierarchy = build_hierarchy(ds)
    ckpt_dir = out / "checkpoints"
    metrics_path = out / "metrics.jsonl"
    metrics_file = open(metrics_path, "w")

    def on_epoch(m: dict, trainer: Trainer) -> None:
        metrics_file.write(json.dumps(m, sort_keys=True) + "\n")
        metrics_file.flush()
        log.info("epoch %d: %s", m["epoch"], {k: round(v, 6) for k, v in m.items() if k != "epoch"})
        if cfg.checkpoint_every and (m["epoch"] + 1) % cfg.checkpoint_every == 0:
            ckpt_dir.mkdir(exist_ok=True)
            _save(ckpt_dir / f"epoch_{m['epoch'] + 1:04d}.cape", trainer, hierarchy, ds, cfg)

    try:
        result = fit(train, test, hierarchy, cfg, on_epoch)
    finally:
        metrics_file.close()
    _save(out / "checkpoint.cape", result.trainer, hierarchy, ds, cfg)
    (out / "architecture.json").write_text(json.dumps(architecture_manifest(result.trainer.net, run_seeds(args, cfg)), indent=2) + "\n")
    eval_set = test if len(test) else train
    rows = evaluation_rows(result.trainer.net, result.pca, eval_set, ds.mask, model_label(cfg.train))
    write_error_report(out, "report", rows)
    if result.metrics:
        report.plot_loss_curves(out / "loss_curves.png", result.metrics)
    for k, r in rows.items():
        print(f"{k}: mean {r['mean'] * 1000:.3f} mm, median {r['median'] * 1000:.3f} mm")
    return EXIT_OK


def run_seeds(args: argparse.Namespace, cfg: RunConfig) -> dict:
    seeds = {"train": cfg.train.seed}
    if args.synthetic:
        seeds["synthetic"] = cfg.synthetic.seed
    return seeds


def _save(path: Path, trainer: Trainer, hierarchy: SamplingHierarchy, ds: Dataset, cfg: RunConfig) -> None:
    extra = {
        "train_config": cfg.train.to_dict(),
        "epoch": trainer.epoch,
        "retained_joints": list(ds.retained_joints),
    }
    path.write_bytes(checkpoint_bytes(trainer.net, hierarchy, step=trainer.epoch, extra=extra, extra_arrays={"mask": ds.mask.astype(np.int64)}))


def cmd_ablate(args: argparse.Namespace, argv: Sequence[str]) -> int:
    cfg = build_run_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_data(args, cfg)
    write_manifest(out, "ablate", argv, cfg, ds)
    train, test = require_splits(ds)
    eval_set = test if len(test) else train
    hierarchy = build_hierarchy(ds)
    variants = [()] + [(a,) for a in (args.ablate or ABLATIONS)]
    table: dict = {}
    for variant in variants:
        vcfg = RunConfig(
            TrainConfig.from_dict({**cfg.train.to_dict(), "ablations": list(variant)}),
            cfg.synthetic, cfg.checkpoint_every, cfg.eval_every,
        )
        result = fit(train, test, hierarchy, vcfg)
        label = ABLATION_LABELS[variant[0]] if variant else MODEL_LABEL
        rows = evaluation_rows(result.trainer.net, result.pca, eval_set, ds.mask, label)
        table[label] = rows[label]
        if not variant and PCA_LABEL in rows:
            table[PCA_LABEL] = rows[PCA_LABEL]
        with open(out / "metrics.jsonl", "a") as f:
            for m in result.metrics:
                f.write(json.dumps({"variant": label, **m}, sort_keys=True) + "\n")
    write_error_report(out, "table", table)
    for k, r in table.items():
        print(f"{k}: mean {r['mean'] * 1000:.3f} mm, median {r['median'] * 1000:.3f} mm")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, argv: Sequence[str]) -> int:
    cfg = build_run_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net, _, meta, extra = _load_ckpt(args)
    ds = load_data(args, cfg)
    write_manifest(out, "eval", argv, cfg, ds, checkpoint=str(args.checkpoint))
    if ds.n_vertices != net.n_vertices:
        raise DatasetError(f"dataset has {ds.n_vertices} vertices, checkpoint expects {net.n_vertices}")
    mask = VertexMask.load(args.mask, ds.n_vertices).included if args.mask else ds.mask
    train, test = require_splits(ds)
    eval_set = test if len(test) else train
    pca = pca_baseline(train.offsets, mask, net.cfg.latent_dim) if len(train) >= net.cfg.latent_dim else None
    rows = evaluation_rows(net, pca, eval_set, mask)
    write_error_report(out, "eval", rows)
    for k, r in rows.items():
        print(f"{k}: mean {r['mean'] * 1000:.3f} mm, median {r['median'] * 1000:.3f} mm, aligned MSE {r['aligned_mse']:.3e}")
    return EXIT_OK


def _load_ckpt(args: argparse.Namespace):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    return load_checkpoint(args.checkpoint)


def _body_model(args: argparse.Namespace, net: CapeNet, hierarchy: SamplingHierarchy) -> BodyModelSpec:
    if getattr(args, "body_model", None):
        spec = load_body_model(args.body_model)
    else:
        spec = toy_body_model(hierarchy.base_positions, n_joints=net.cfg.pose_joints)
    if spec.n_vertices != net.n_vertices:
        raise DatasetError(f"body model has {spec.n_vertices} vertices, checkpoint expects {net.n_vertices}")
    if len(spec.retained_joints) != net.cfg.pose_joints:
        raise DatasetError(f"body model retains {len(spec.retained_joints)} joints, network expects {net.cfg.pose_joints}")
    return spec


def _read_json(path: str, what: str):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read {what} {path}: {exc}") from exc


def _pose(raw, spec: BodyModelSpec) -> PoseParams:
    try:
        pose = PoseParams(np.asarray(raw, dtype=np.float64).reshape(-1, 3))
    except (TypeError, ValueError, BodyModelError) as exc:
        raise DatasetError(f"invalid pose: {exc}") from exc
    if pose.n_joints != spec.n_joints:
        raise DatasetError(f"pose has {pose.n_joints} joints, body model has {spec.n_joints}")
    return pose


def _clothing(label: str) -> np.ndarray:
    try:
        return clothing_onehot(label)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_sample(args: argparse.Namespace, argv: Sequence[str]) -> int:
    onehot = _clothing(args.clothing)
    if args.count < 0:
        raise ConfigError("--count must be nonnegative")
    net, hierarchy, _, _ = _load_ckpt(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    write_manifest(out, "sample", argv, None, None, seed=seed, checkpoint=str(args.checkpoint))
    spec = _body_model(args, net, hierarchy)
    pose = _pose(_read_json(args.pose, "pose"), spec) if args.pose else PoseParams.zeros(spec.n_joints)
    rot = retained_rotations(pose, spec.retained_joints).reshape(1, -1)
    if args.sampling_trick:
        log.warning("--sampling-trick is a stub; drawing standard-normal latent codes")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((args.count, net.cfg.latent_dim))
    faces = hierarchy.base.faces
    for i in range(args.count):
        offsets = net.generate(z[i : i + 1], rot, onehot[None])[0]
        verts = pose_clothed(spec, np.zeros(spec.n_betas), pose, offsets)
        write_mesh(out / f"sample_{i:03d}.{args.format}", verts, faces, args.format)
    print(f"wrote {args.count} meshes to {out}")
    return EXIT_OK


def cmd_repose(args: argparse.Namespace, argv: Sequence[str]) -> int:
    onehot = _clothing(args.clothing)
    net, hierarchy, _, _ = _load_ckpt(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "repose", argv, None, None, seed=args.seed, checkpoint=str(args.checkpoint))
    spec = _body_model(args, net, hierarchy)
    z = np.zeros(net.cfg.latent_dim)
    if args.z:
        z = np.asarray(_read_json(args.z, "latent code"), dtype=np.float64).ravel()
        if z.shape != (net.cfg.latent_dim,):
            raise DatasetError(f"latent code has {z.size} values, expected {net.cfg.latent_dim}")
    raw_poses = _read_json(args.poses, "pose sequence") if args.poses else [np.zeros((spec.n_joints, 3)).tolist()]
    poses = [_pose(p, spec) for p in raw_poses]
    if not poses:
        raise DatasetError("pose sequence is empty")
    faces = hierarchy.base.faces
    offsets = []
    for i, pose in enumerate(poses):
        rot = retained_rotations(pose, spec.retained_joints).reshape(1, -1)
        d = net.generate(z[None], rot, onehot[None])[0]
        offsets.append(d)
        write_mesh(out / f"frame_{i:03d}.{args.format}", pose_clothed(spec, np.zeros(spec.n_betas), pose, d), faces, args.format)
    diffs = np.stack([np.linalg.norm(d - offsets[0], axis=1) for d in offsets])  # (frames, V)
    rest = spec.template + offsets[0]
    write_ply(out / "offset_difference.ply", rest, faces, vertex_scalars={f"diff_{i:03d}": diffs[i] for i in range(len(poses))})
    report.write_table(
        out / "offset_difference.tsv",
        ["vertex"] + [f"frame_{i:03d}" for i in range(len(poses))],
        ([v] + list(diffs[:, v]) for v in range(diffs.shape[1])),
        delimiter="\t",
    )
    report.plot_difference_field(out / "offset_difference.png", spec.template, diffs[-1])
    print(f"wrote {len(poses)} frames; max offset difference {diffs.max() * 1000:.3f} mm")
    return EXIT_OK


def cmd_export(args: argparse.Namespace, argv: Sequence[str]) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = build_run_config(args)
    ds = load_data(args, cfg) if (args.synthetic or args.dataset_dir) else None
    write_manifest(out, "export", argv, cfg, ds, checkpoint=args.checkpoint)
    if ds is None and not args.checkpoint:
        raise ConfigError("nothing to export: pass --checkpoint, --synthetic or --dataset-dir")
    if ds is not None:
        save_dataset(ds, out / "dataset")
    if args.checkpoint:
        net, hierarchy, meta, _ = load_checkpoint(args.checkpoint)
        seeds = {"train": meta.get("extra", {}).get("train_config", {}).get("seed")}
        (out / "architecture.json").write_text(json.dumps(architecture_manifest(net, seeds), indent=2) + "\n")
        save_hierarchy(out / "hierarchy.cape", hierarchy, net.cfg.laplacian)
        mean_mesh = hierarchy.base_positions + net.offset_mean
        write_mesh(out / f"mean_clothed.{args.format}", mean_mesh, hierarchy.base.faces, args.format)
    print(f"exported to {out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sample": cmd_sample,
    "repose": cmd_repose,
    "ablate": cmd_ablate,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config with optional train / synthetic sections")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--synthetic", action="store_true", help="use the built-in synthetic dataset")
    common.add_argument("--dataset-dir", help="dataset directory (topology.json + records/)")
    common.add_argument("--ablate", action="append", choices=ABLATIONS, default=None)
    common.add_argument("--out-dir", default="cape_out")
    common.add_argument("--checkpoint")
    common.add_argument("--epochs", type=int, default=None)
    common.add_argument("--format", choices=("obj", "ply"), default="obj")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cape", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a model and write checkpoint, metrics and report")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint against a dataset")
    ev.add_argument("--mask", help="vertex mask file (0/1 flags or .npy)")
    sm = sub.add_parser("sample", parents=[common], help="sample clothing for a fixed pose and clothing type")
    sm.add_argument("--pose", help="JSON file with a (joints, 3) axis-angle pose")
    sm.add_argument("--clothing", default=CLOTHING_TYPES[0])
    sm.add_argument("--count", type=int, default=4)
    sm.add_argument("--body-model", help="body model container; defaults to a chain skeleton on the template")
    sm.add_argument(
        "--sampling-trick",
        action="store_true",
        help="reserved for a prior-matched sampler; currently draws plain standard-normal codes",
    )
    rp = sub.add_parser("repose", parents=[common], help="decode a fixed latent code under a pose sequence")
    rp.add_argument("--z", help="JSON file with the latent code")
    rp.add_argument("--poses", help="JSON file with a list of (joints, 3) poses")
    rp.add_argument("--clothing", default=CLOTHING_TYPES[0])
    rp.add_argument("--body-model")
    sub.add_parser("ablate", parents=[common], help="train the full model and ablations, write the comparison table")
    sub.add_parser("export", parents=[common], help="export a dataset layout, architecture and hierarchy")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, TopologyError, BodyModelError, CheckpointError, container.ContainerError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
