"""Figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
})


def training_curves(log, path: str | Path) -> Path:
    rows = log.rows
    x = np.arange(1, len(rows) + 1)
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8, 3))
    ax_loss.plot(x, [r.train_loss for r in rows], marker="o", color="k", lw=1)
    ax_loss.set_xlabel("epoch (stage 1, then stage 2)")
    ax_loss.set_ylabel("train loss")
    ax_acc.plot(x, [r.expr_acc for r in rows], marker="o", lw=1, label="expression")
    ax_acc.plot(x, [r.mask_acc for r in rows], marker="s", lw=1, label="mask")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.set_xlabel("epoch (stage 1, then stage 2)")
    ax_acc.set_ylabel("train accuracy")
    ax_acc.legend(frameon=False)
    boundary = sum(1 for r in rows if r.stage == 1)
    if 0 < boundary < len(rows):
        for ax in (ax_loss, ax_acc):
            ax.axvline(boundary + 0.5, color="0.6", ls="--", lw=0.8)
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def confusion(cm: np.ndarray, labels: Sequence[str], path: str | Path, title: str = "") -> Path:
    cm = np.asarray(cm)
    size = 1.2 + 0.45 * len(labels)
    fig, ax = plt.subplots(figsize=(size, size))
    ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    hi = cm.max() if cm.size else 0
    for (i, j), v in np.ndenumerate(cm):
        ax.text(j, i, str(v), ha="center", va="center", fontsize=7,
                color="white" if v > hi / 2 else "black")
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def complexity_bars(rows: Sequence[tuple[str, float, float, float | None, float | None]], path: str | Path) -> Path:
    """``rows``: (name, params_M, gflops, reported_params_M, reported_gflops)."""
    names = [r[0] for r in rows]
    x = np.arange(len(rows))
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    for ax, col, ref, unit in ((axes[0], 1, 3, "params (M)"), (axes[1], 2, 4, "GFLOPs")):
        ax.bar(x - 0.2, [r[col] for r in rows], 0.4, label="counted", color="0.3")
        ax.bar(x + 0.2, [r[ref] or 0.0 for r in rows], 0.4, label="reported", color="0.75")
        ax.set_xticks(x, names)
        ax.set_ylabel(unit)
    axes[0].legend(frameon=False)
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
