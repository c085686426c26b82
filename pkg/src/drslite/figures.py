"""Report figures rendered next to the delimited outputs."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["save_loss_curve", "save_iou_bars", "save_ablation_chart"]


def save_loss_curve(path, losses: Sequence[float], title: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(1, len(losses) + 1), losses, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_iou_bars(path, names: Sequence[str], ious: Sequence[float], mean: float) -> None:
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(names)), 3.2))
    ax.bar(range(len(names)), ious, color="#4878cf")
    ax.axhline(mean, color="#d65f5f", ls="--", lw=1, label=f"mean {mean:.3f}")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("IoU")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_chart(path, rows: Sequence[tuple[str, float, float]]) -> None:
    """Rows: (setting, pseudo-label mIoU, classifier accuracy)."""
    settings = [r[0] for r in rows]
    mious = [r[1] for r in rows]
    accs = [r[2] for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(4.5, 1.1 * len(rows)), 3.4))
    ax.bar([i - 0.18 for i in x], mious, width=0.36, label="mIoU", color="#4878cf")
    ax.bar([i + 0.18 for i in x], accs, width=0.36, label="accuracy", color="#6acc65")
    ax.set_xticks(list(x))
    ax.set_xticklabels(settings, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
