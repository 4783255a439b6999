"""Render evaluation curves and training traces to image files.

Every report directory gets figures next to its CSVs so runs can be eyeballed
without loading the delimited output anywhere.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def save_pr_curve(report, path, label=None):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(report.recall, report.precision, "-", lw=1.5, label=label)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.grid(True, alpha=0.3)
    if label:
        ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_f_curve(report, path, label=None):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(report.thresholds, report.f_measure, "-", lw=1.5, label=label)
    ax.set_xlabel("segmentation threshold")
    ax.set_ylabel("F-measure")
    ax.set_xlim(0, 255)
    ax.set_ylim(0, 1.02)
    ax.grid(True, alpha=0.3)
    if label:
        ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_curves_from_arrays(thresholds, precision, recall, f_values, out_dir):
    """Re-render pr/f figures from already-exported curve data."""
    class _Shim:
        pass
    shim = _Shim()
    shim.thresholds, shim.precision = thresholds, precision
    shim.recall, shim.f_measure = recall, f_values
    return [
        save_pr_curve(shim, Path(out_dir) / "pr_curve.png"),
        save_f_curve(shim, Path(out_dir) / "f_curve.png"),
    ]


def save_loss_curve(train_log, path):
    epochs = [r.epoch for r in train_log.records]
    losses = [r.loss for r in train_log.records]
    lrs = [r.lr for r in train_log.records]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, "-", lw=1.2, color="C0")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss", color="C0")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax2 = ax.twinx()
    ax2.step(epochs, lrs, where="post", color="C1", alpha=0.6, lw=1.0)
    ax2.set_ylabel("learning rate", color="C1")
    ax2.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_variant_comparison(rows, path):
    """Bar chart of max F and MAE per ablation variant.

    ``rows`` are (variant, max_f, f_at_fixed, mae, parameter_count) tuples.
    """
    variants = [r[0] for r in rows]
    max_f = [r[1] for r in rows]
    maes = [r[3] for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([i - 0.2 for i in x], max_f, width=0.4, label="max F", color="C0")
    ax.bar([i + 0.2 for i in x], maes, width=0.4, label="MAE", color="C3")
    ax.set_xticks(list(x))
    ax.set_xticklabels(variants)
    ax.set_ylim(0, 1.05)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    for i, v in zip(x, max_f):
        ax.text(i - 0.2, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
