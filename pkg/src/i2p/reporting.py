"""Matplotlib figure rendering for run outputs.

Every report path writes figures next to its delimited output: loss curves
beside metrics.csv, accuracy bars beside the ablation CSV, and view montages
beside the raw PPM renders.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curves(history, path) -> None:
    """Per-epoch loss terms and learning rate."""
    epochs = [r.epoch for r in history]
    fig, (ax, ax_lr) = plt.subplots(
        2, 1, figsize=(7, 6), sharex=True, gridspec_kw={"height_ratios": [3, 1]})
    ax.plot(epochs, [r.loss_total for r in history], label="total", lw=1.8)
    ax.plot(epochs, [r.loss_3d for r in history], label="3D", lw=1.2)
    ax.plot(epochs, [r.loss_2d for r in history], label="2D", lw=1.2)
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    ax_lr.plot(epochs, [r.lr for r in history], color="gray", lw=1.2)
    ax_lr.set_xlabel("epoch")
    ax_lr.set_ylabel("lr")
    ax_lr.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_bars(summary: list[dict], path) -> None:
    """Mean ± std probe accuracy per grid configuration."""
    labels = [s["config_id"] for s in summary]
    means = [s["mean"] for s in summary]
    stds = [s["std"] for s in summary]
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(labels)), 4))
    xs = np.arange(len(labels))
    ax.bar(xs, means, yerr=stds, capsize=4, color="#5b8db8")
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("probe accuracy")
    ax.set_ylim(0, 1)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_fraction_trend(rows: list[dict], path) -> None:
    """Accuracy vs pre-training data fraction, one line per seed."""
    fig, ax = plt.subplots(figsize=(6, 4))
    seeds = sorted({r["seed"] for r in rows})
    for seed in seeds:
        pts = sorted((r["fraction"], r["accuracy"]) for r in rows if r["seed"] == seed)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"seed {seed}")
    ax.set_xlabel("pre-training data fraction")
    ax.set_ylabel("probe accuracy")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_per_class_bars(per_class: dict[int, float], class_names: dict[int, str], path) -> None:
    labels = [class_names.get(c, str(c)) for c in per_class]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = np.arange(len(per_class))
    ax.bar(xs, list(per_class.values()), color="#7aa874")
    ax.set_xticks(xs)
    ax.set_xticklabels(labels)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_view_montage(depth_maps, sal_maps, token_image: np.ndarray, path) -> None:
    """Depth maps, saliency grids, and the visible/masked token scatter."""
    views = len(depth_maps)
    fig, axes = plt.subplots(2, views + 1, figsize=(3 * (views + 1), 6))
    axes = np.atleast_2d(axes)
    for i, (d, s) in enumerate(zip(depth_maps, sal_maps)):
        axes[0, i].imshow(d.pixels, cmap="gray", origin="lower")
        axes[0, i].set_title(f"depth ({d.axis})", fontsize=9)
        axes[1, i].imshow(s.values[:, :, 0], cmap="magma", origin="lower")
        axes[1, i].set_title(f"saliency ({s.axis})", fontsize=9)
    axes[0, views].imshow(token_image, cmap="gray", origin="lower")
    axes[0, views].set_title("tokens: visible/masked", fontsize=9)
    axes[1, views].axis("off")
    for ax in axes.ravel():
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
