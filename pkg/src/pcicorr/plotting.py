"""Static figures written next to the CSV outputs of a run."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# PNG metadata carries no timestamp, so figures are byte-stable across runs
_PNG_META = {"Software": None}


def plot_masks(masks, path, first: int = 128):
    """Gray-scale heat map, one row per pair; darker means higher weight."""
    pairs = list(masks.pairs) if hasattr(masks, "pairs") else list(masks)
    rows = np.vstack([np.asarray(masks[p].weights)[:first] for p in pairs])
    fig, ax = plt.subplots(figsize=(max(4.0, 0.25 * rows.shape[1] + 1.5), 0.45 * len(pairs) + 1.2))
    ax.imshow(rows, cmap="gray_r", vmin=0.0, vmax=1.0, aspect="auto", interpolation="nearest")
    ax.set_yticks(range(len(pairs)))
    ax.set_yticklabels([rf"$\lambda_{{{i + 1}{j + 1}}}$" for i, j in pairs])
    ax.set_xlabel("diagonal index")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_history(history, path):
    epochs = [r.epoch for r in history]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    for ax, key in zip(axes, ("correlation_loss", "task_loss", "total_loss")):
        ax.plot(epochs, [getattr(r, key) for r in history], color="k", lw=1)
        ax.set_title(key.replace("_", " "))
        ax.set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_trace(losses, path):
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(range(len(losses)), losses, color="k", lw=1)
    ax.set_xlabel("PGD step")
    ax.set_ylabel("correlation loss")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)
