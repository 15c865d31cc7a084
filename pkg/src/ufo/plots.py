"""Matplotlib figures rendered next to the text reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def matrix_png(matrix, path, title: str = "") -> Path:
    m = np.ma.masked_invalid(np.asarray(matrix, dtype=np.float64))
    n = m.shape[0]
    fig, ax = plt.subplots(figsize=(1.2 * n + 1.5, 1.2 * n + 1))
    im = ax.imshow(m, vmin=0.0, vmax=1.0, cmap="Blues")
    for i in range(n):
        for j in range(i + 1):
            ax.text(j, i, f"{m[i, j]:.2f}", ha="center", va="center", color="black" if m[i, j] < 0.6 else "white")
    ax.set_xticks(range(n), [f"T{j + 1}" for j in range(n)])
    ax.set_yticks(range(n), [f"after T{i + 1}" for i in range(n)])
    ax.set_title(title or "accuracy matrix")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def ablation_png(names, accuracies, path) -> Path:
    """Bar chart of per-variant median accuracy."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(names, accuracies, color="#1f4ea1")
    for k, a in enumerate(accuracies):
        ax.text(k, a + 0.01, f"{a:.3f}", ha="center")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("median accuracy")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def scores_png(clean, noisy, path) -> Path:
    """Histogram of final scores split by the noise mask."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bins = np.linspace(min(np.min(clean, initial=0), np.min(noisy, initial=0)), max(np.max(clean, initial=1), np.max(noisy, initial=1)), 30)
    ax.hist(clean, bins=bins, alpha=0.6, label="clean")
    ax.hist(noisy, bins=bins, alpha=0.6, label="noisy")
    ax.set_xlabel("final score")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
