"""Matplotlib renderers for the report paths: loss curves, log-Mel images,
and metric bar charts. Everything writes PNG files; no interactive backend.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curve(history, path):
    """history: iterable of rows with .step, .train_loss, .val_loss."""
    steps = [r.step for r in history]
    train = [r.train_loss for r in history]
    val_pts = [(r.step, r.val_loss) for r in history if r.val_loss is not None]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(steps, train, label="train", lw=1.2)
    if val_pts:
        ax.semilogy(*zip(*val_pts), "o-", label="validation", ms=3, lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("masked MSE")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_logmel_png(matrix, path, title=None):
    fig, ax = plt.subplots(figsize=(8, 3.2))
    im = ax.imshow(matrix, origin="lower", aspect="auto", cmap="magma",
                   interpolation="nearest")
    ax.set_xlabel("frame (10 ms)")
    ax.set_ylabel("Mel band")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="ln energy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_report_png(report, path):
    """Grouped bars: STOI (x100) per variant for each (snr, noise) pair."""
    conditions = sorted({(r.snr_db, r.noise) for r in report.rows})
    variants = []
    for r in report.rows:
        if r.variant not in variants:
            variants.append(r.variant)
    by_key = {(r.variant, r.snr_db, r.noise): r for r in report.rows}
    width = 0.8 / max(len(variants), 1)
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    for ax, metric, label in zip(
            axes, ("stoi", "si_sdr_db", "lsd_db"),
            ("STOI (x100)", "SI-SDR (dB)", "LSD (dB)")):
        for vi, variant in enumerate(variants):
            xs, ys = [], []
            for ci, cond in enumerate(conditions):
                row = by_key.get((variant,) + cond)
                if row is None:
                    continue
                value = getattr(row, metric)
                xs.append(ci + vi * width)
                ys.append(100.0 * value if metric == "stoi" else value)
            ax.bar(xs, ys, width=width, label=variant)
        ax.set_xticks([i + 0.4 - width / 2 for i in range(len(conditions))])
        ax.set_xticklabels([f"{n}\n{s:+.0f} dB" for s, n in conditions],
                           fontsize=8)
        ax.set_ylabel(label)
        ax.grid(True, axis="y", alpha=0.3)
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
