"""Figures written next to the delimited reports: loss curves, Dice bars,
embedding scatter and segmentation overlays."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .embeddings import EmbeddingTable, principal_projection  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "semicontrast",
}
# fixed metadata keeps PNG bytes identical across reruns
PNG_META = {"Software": None}

CLASS_COLORS = ["#000000", "#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#ffff33", "#a65628"]


def class_cmap(num_classes: int) -> ListedColormap:
    return ListedColormap(CLASS_COLORS[:max(num_classes, 2)])


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=PNG_META)
    plt.close(fig)
    return path


def plot_loss_curves(logs: dict, path) -> Path:
    """``logs`` maps a curve name to rows of (stage, epoch, mean_loss, lr)."""
    stages = sorted({r[0] for rows in logs.values() for r in rows})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, max(len(stages), 1), figsize=(3.2 * max(len(stages), 1), 2.6),
                                 squeeze=False)
        for ax, stage in zip(axes[0], stages):
            for name in sorted(logs):
                rows = [r for r in logs[name] if r[0] == stage]
                if rows:
                    ax.plot([r[1] for r in rows], [r[2] for r in rows], label=name, lw=1)
            ax.set_title(stage)
            ax.set_xlabel("epoch")
            ax.set_ylabel("mean loss")
        if stages:
            axes[0][0].legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_dice_bars(aggregates: dict, variants, fractions, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(variants) * max(len(fractions), 1) / 2, 3))
        width = 0.8 / max(len(fractions), 1)
        x = np.arange(len(variants))
        for i, f in enumerate(fractions):
            means = [aggregates.get((v, f), (math.nan,))[0] for v in variants]
            stds = [aggregates.get((v, f), (0, 0))[1] for v in variants]
            ax.bar(x + i * width, means, width, yerr=stds, label=f"{100 * f:g}% labeled", capsize=2)
        ax.set_xticks(x + width * (len(fractions) - 1) / 2)
        ax.set_xticklabels(variants, rotation=30, ha="right")
        ax.set_ylabel("test Dice")
        ax.set_ylim(0, 1)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_embedding_scatter(tables: dict, path, num_classes: int) -> Path:
    """One panel per table, points colored by ground-truth class."""
    names = sorted(tables)
    cmap = class_cmap(num_classes)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, max(len(names), 1), figsize=(2.8 * max(len(names), 1), 2.8),
                                 squeeze=False)
        for ax, name in zip(axes[0], names):
            t: EmbeddingTable = tables[name]
            if len(t) >= 2:
                xy = principal_projection(t.features)
                ax.scatter(xy[:, 0], xy[:, 1], c=t.labels, cmap=cmap, vmin=-0.5,
                           vmax=cmap.N - 0.5, s=3, linewidths=0)
            ax.set_title(name)
            ax.set_xticks([])
            ax.set_yticks([])
        fig.tight_layout()
        return _save(fig, path)


def plot_segmentation_panel(image, truth, predictions: dict, path, num_classes: int) -> Path:
    """Input, ground truth, then one column per variant prediction."""
    cols = [("input", None), ("ground truth", truth)] + [(k, predictions[k]) for k in predictions]
    cmap = class_cmap(num_classes)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(cols), figsize=(1.9 * len(cols), 2.2), squeeze=False)
        for ax, (title, lab) in zip(axes[0], cols):
            ax.imshow(image, cmap="gray", interpolation="nearest")
            if lab is not None:
                masked = np.ma.masked_where(lab == 0, lab)
                ax.imshow(masked, cmap=cmap, vmin=-0.5, vmax=cmap.N - 0.5, alpha=0.6,
                          interpolation="nearest")
            ax.set_title(title)
            ax.axis("off")
        fig.tight_layout()
        return _save(fig, path)
