"""Report figures rendered to files next to their data counterparts.

Every chart here mirrors a machine-readable artifact (CSV or JSON) that the
commands emit anyway; the PNGs are for eyeballing runs, the data files stay
the source of truth.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

METRIC_ORDER = ("bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l", "cider")
METRIC_LABELS = ("B-1", "B-2", "B-3", "B-4", "METEOR", "ROUGE_L", "CIDEr")


def save_loss_curve(history, path) -> Path:
    """Train/validation loss per epoch."""
    path = Path(path)
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(epochs, [h["train_loss"] for h in history], label="loss", lw=1.5)
    ax.plot(epochs, [h["val_loss"] for h in history], label="validation loss", lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_metric_bars(report: dict, path) -> Path:
    """Bar chart over the seven caption metrics of one evaluation."""
    path = Path(path)
    values = [report[m] for m in METRIC_ORDER]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.bar(range(len(values)), values, color="#4878a8")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(METRIC_LABELS, rotation=30, ha="right")
    ax.set_ylabel("score")
    ax.grid(axis="y", alpha=0.3)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_ablation_chart(rows, path, metric: str = "cider") -> Path:
    """One bar per ablation combination for the chosen metric.

    rows are dicts with a "label" key plus metric keys; failed combinations
    (metric missing) render as zero-height hatched bars.
    """
    path = Path(path)
    labels = [r["label"] for r in rows]
    values = [r.get(metric, 0.0) for r in rows]
    failed = [metric not in r for r in rows]
    fig, ax = plt.subplots(figsize=(max(6.4, 1.1 * len(rows)), 4.2))
    bars = ax.bar(range(len(rows)), values, color="#4878a8")
    for bar, bad in zip(bars, failed):
        if bad:
            bar.set_color("#c0c0c0")
            bar.set_hatch("//")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel(metric)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
