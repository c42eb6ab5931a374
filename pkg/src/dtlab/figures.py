"""Matplotlib renderers for run artifacts.

Every report path that writes a CSV also renders a PNG next to it via
these helpers. Agg backend only; nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_loss_curve", "save_eval_curves", "save_attention_heatmap"]


def save_loss_curve(
    path,
    steps,
    train_losses,
    val_steps=None,
    val_values=None,
    val_label: str = "validation",
    ylabel: str = "loss",
    title: str = "training loss",
) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, train_losses, lw=1.0, label="train")
    if val_steps is not None and len(val_steps):
        ax.plot(val_steps, val_values, "o-", ms=3, lw=1.0, label=val_label)
    ax.set_xlabel("step")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_eval_curves(path, curves: dict, ylabel: str = "normalized score", title: str = "") -> Path:
    """curves: label -> (steps, values); one line per label."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (steps, values) in curves.items():
        ax.plot(steps, values, "o-", ms=3, lw=1.0, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_attention_heatmap(path, matrix: np.ndarray, title: str = "") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(matrix, cmap="viridis", vmin=0.0, interpolation="nearest")
    ax.set_xlabel("key position")
    ax.set_ylabel("query position")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
