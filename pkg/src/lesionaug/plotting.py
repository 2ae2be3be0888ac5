"""Report figures written next to the delimited report files."""

from __future__ import annotations

import os
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 110,
})


def _save(fig, path: os.PathLike) -> str:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def plot_training_curves(histories: Mapping[str, tuple[Sequence[float], Sequence[float]]], path):
    """``histories`` maps run name to (train losses, validation Jaccards) per epoch."""
    fig, (ax_l, ax_j) = plt.subplots(1, 2, figsize=(8, 3))
    for name, (losses, jacs) in histories.items():
        epochs = np.arange(1, len(losses) + 1)
        ax_l.plot(epochs, losses, label=name)
        ax_j.plot(np.arange(1, len(jacs) + 1), jacs, label=name)
    ax_l.set(xlabel="epoch", ylabel="cross-entropy", title="training loss")
    ax_j.set(xlabel="epoch", ylabel="mean Jaccard", title="validation Jaccard", ylim=(0, 1))
    ax_j.legend(frameon=False)
    return _save(fig, path)


def plot_gan_traces(traces: Mapping[str, Mapping[str, Sequence[float]]], path):
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    for name, tr in traces.items():
        epochs = np.arange(1, len(tr["d_loss"]) + 1)
        axes[0].plot(epochs, tr["d_loss"], label=f"{name} D")
        axes[0].plot(epochs, tr["g_loss"], "--", label=f"{name} G")
        acc = 0.5 * (np.asarray(tr["d_real_acc"]) + np.asarray(tr["d_fake_acc"]))
        axes[1].plot(epochs, acc, label=f"{name} train")
        if "holdout_acc" in tr:
            axes[1].plot(epochs, tr["holdout_acc"], ":", label=f"{name} held-out")
    axes[0].set(xlabel="epoch", ylabel="loss", title="adversarial losses")
    axes[0].legend(frameon=False, fontsize=7)
    axes[1].axhline(0.5, color="0.6", lw=0.8)
    axes[1].set(xlabel="epoch", ylabel="accuracy", title="discriminator accuracy", ylim=(0, 1))
    axes[1].legend(frameon=False)
    return _save(fig, path)


def plot_partition(scores: Mapping[str, float], simple_ids: Sequence[str], path):
    simple = set(simple_ids)
    s_vals = [v for k, v in scores.items() if k in simple]
    c_vals = [v for k, v in scores.items() if k not in simple]
    fig, ax = plt.subplots(figsize=(4.5, 3))
    bins = np.linspace(0, 1, 26)
    ax.hist(s_vals, bins=bins, alpha=0.7, label=f"simple (n={len(s_vals)})")
    ax.hist(c_vals, bins=bins, alpha=0.7, label=f"complex (n={len(c_vals)})")
    ax.set(xlabel="per-image Dice", ylabel="images", title="difficulty split")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_synthesis_grid(rows: Sequence[tuple[str, np.ndarray, np.ndarray, np.ndarray]], path):
    """Each row: (title, source image, mask, synthesized image)."""
    n = len(rows)
    fig, axes = plt.subplots(n, 3, figsize=(5, 1.7 * max(n, 1)), squeeze=False)
    for r, (title, src, mask, syn) in enumerate(rows):
        for c, (img, name) in enumerate(((src, "source"), (mask, "label"), (syn, "synthesized"))):
            ax = axes[r, c]
            ax.imshow(img, cmap="gray" if img.ndim == 2 else None, vmin=0, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(name)
        axes[r, 0].set_ylabel(title, fontsize=7)
    return _save(fig, path)


def plot_metric_comparison(reports: Mapping[str, Mapping[str, float]], path,
                           fields=("dice", "jaccard", "t_jaccard", "sensitivity", "specificity", "accuracy")):
    fig, ax = plt.subplots(figsize=(7, 3))
    width = 0.8 / max(len(reports), 1)
    x = np.arange(len(fields))
    for i, (name, means) in enumerate(reports.items()):
        ax.bar(x + i * width, [100 * means[f] for f in fields], width, label=name)
    ax.set_xticks(x + width * (len(reports) - 1) / 2)
    ax.set_xticklabels(fields)
    ax.set(ylabel="%", ylim=(0, 100), title="validation metrics")
    ax.legend(frameon=False, fontsize=7, loc="lower right")
    return _save(fig, path)
