"""Delimited tables and static figures for training and evaluation runs."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

ERROR_COLUMNS = ("mean", "median")


def write_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence], delimiter: str = ",") -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path: str | Path, delimiter: str = ",") -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f, delimiter=delimiter))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def error_table(path: str | Path, results: Mapping[str, Mapping[str, float]], unit_scale: float = 1000.0) -> None:
    """Rows of (label, mean, median) per-vertex error; metres scaled to millimetres by default."""
    rows = [(label, r["mean"] * unit_scale, r["median"] * unit_scale) for label, r in results.items()]
    write_table(path, ("model", "mean_mm", "median_mm"), rows)


def plot_loss_curves(path: str | Path, metrics: Sequence[Mapping[str, float]]) -> None:
    keys = [k for k in ("recon", "edge", "kl", "gan", "d") if any(k in m for m in metrics)]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    epochs = [m["epoch"] for m in metrics]
    for k in keys:
        axes[0].plot(epochs, [m.get(k, np.nan) for m in metrics], label=k)
    axes[0].set_yscale("symlog", linthresh=1e-3)
    axes[0].set_xlabel("epoch")
    axes[0].set_title("loss terms")
    axes[0].legend()
    for k in ("train_error_mean", "test_error_mean"):
        if any(k in m for m in metrics):
            axes[1].plot(epochs, [1000 * m.get(k, np.nan) for m in metrics], label=k)
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("mm")
    axes[1].set_title("per-vertex error")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_error_histogram(path: str | Path, errors: Mapping[str, np.ndarray]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    hi = max((float(np.percentile(e, 99)) for e in errors.values() if len(e)), default=1.0) * 1000
    bins = np.linspace(0.0, hi if hi > 0 else 1.0, 60)
    for label, e in errors.items():
        ax.hist(np.asarray(e) * 1000, bins=bins, histtype="step", label=label)
    ax.set_xlabel("per-vertex error (mm)")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_difference_field(path: str | Path, positions: np.ndarray, magnitude: np.ndarray) -> None:
    """Scatter of the rest geometry coloured by a per-vertex scalar, two side views."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 5))
    for ax, (i, j) in zip(axes, ((0, 2), (1, 2))):
        sc = ax.scatter(positions[:, i], positions[:, j], c=magnitude * 1000, s=6, cmap="viridis")
        ax.set_aspect("equal")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(sc, ax=axes, label="offset difference (mm)")
    fig.savefig(path, dpi=100)
    plt.close(fig)
