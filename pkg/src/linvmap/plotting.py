"""PNG figures rendered next to the CSV reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_curves(reports, path) -> Path:
    """Cumulative error curves, one line per method, mean error in the legend."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, rep in reports.items():
        ax.plot(rep.curve[:, 0], rep.curve[:, 1], label=f"{label} ({rep.mean_error:.3f})")
    ax.set_xlabel("error threshold")
    ax.set_ylabel("fraction of correspondences")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_losses(curves: dict[str, list[float]], path) -> Path:
    """Training loss per step on a log scale; non-finite (skipped) steps are dropped."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, losses in curves.items():
        v = np.asarray(losses, dtype=float)
        steps = np.arange(v.size)
        ok = np.isfinite(v) & (v > 0)
        ax.plot(steps[ok], v[ok], label=label, lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    if curves:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path
