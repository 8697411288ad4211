"""SVG figures for training runs.  Output is byte-stable for identical input."""
from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .train import RunRecord  # noqa: E402

SVG_SALT = "vqnn"
SVG_METADATA = {"Date": None, "Creator": None}


def _save(fig, path: str | os.PathLike) -> None:
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)


def accuracy_plot(record: RunRecord, path: str | os.PathLike, title: str = "") -> None:
    """Train/validation accuracy per epoch; the y range follows the data."""
    if not record.rows:
        raise ValueError("empty run record")
    epochs = [r.epoch for r in record.rows]
    train = [r.train_acc for r in record.rows]
    val = [r.val_acc for r in record.rows]
    lo, hi = min(train + val), max(train + val)
    pad = max(0.02, 0.05 * (hi - lo))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, train, marker="o", ms=3, label="train")
    ax.plot(epochs, val, marker="s", ms=3, label="validation")
    ax.set_xlim(epochs[0] - 0.5, epochs[-1] + 0.5)
    ax.set_ylim(max(0.0, lo - pad), min(1.0, hi + pad))
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    _save(fig, path)


def prediction_grid(images: Sequence[np.ndarray], labels: Sequence[int], probs: Sequence[float],
                    path: str | os.PathLike, cols: int = 4) -> None:
    """Thumbnails captioned with the predicted label and probability; red captions are mistakes."""
    n = len(images)
    if n == 0:
        raise ValueError("no images to plot")
    rows = -(-n // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2 * cols, 2.2 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, img, y, p in zip(axes.flat, images, labels, probs):
        pred = int(p >= 0.5)
        ax.imshow(np.asarray(img).reshape(np.asarray(img).shape[-2:]), cmap="gray", vmin=0, vmax=1)
        ax.set_title(f"pred {pred}  p={p:.2f}", fontsize=8, color="black" if pred == y else "red")
    fig.tight_layout()
    _save(fig, path)
