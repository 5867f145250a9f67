"""Figures for training curves and ablation tables."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_ablation(rows: Sequence[tuple[str, float]], path: Path, title: str = "") -> Path:
    names = [r[0] for r in rows]
    wers = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(rows)), 3.2))
    bars = ax.bar(range(len(rows)), wers, color="#4c72b0")
    for b, w in zip(bars, wers):
        ax.annotate(f"{w:.2f}", (b.get_x() + b.get_width() / 2, b.get_height()), ha="center", va="bottom", fontsize=8)
    ax.set_xticks(range(len(rows)), names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("WER (%)")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_training(metrics: dict[str, list[dict]], path: Path, key: str = "L_total") -> Path:
    """One line per run; ``metrics`` maps a run label to its per-epoch rows."""
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    for label in sorted(metrics):
        rows = metrics[label]
        ax.plot([int(r["epoch"]) for r in rows], [float(r[key]) for r in rows], marker="o", ms=3, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(key)
    if metrics:
        ax.legend(fontsize=8)
    return _save(fig, path)
