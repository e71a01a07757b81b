"""Matplotlib figures for the CLI report paths (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte-stable
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_kernel(weights: np.ndarray, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(3.2, 3.0))
    im = ax.imshow(weights, cmap="magma", interpolation="nearest")
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_xticks(range(weights.shape[1]))
    ax.set_yticks(range(weights.shape[0]))
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_before_after(before: np.ndarray, after: np.ndarray, path, titles=("input", "masked"),
                      extra: Sequence[np.ndarray] = (), extra_titles: Sequence[str] = ()) -> Path:
    panels = [before, after, *extra]
    names = [*titles, *extra_titles]
    fig, axes = plt.subplots(1, len(panels), figsize=(2.4 * len(panels), 2.6))
    for ax, img, name in zip(np.atleast_1d(axes), panels, names):
        ax.imshow(np.clip(img, 0, 1), interpolation="nearest")
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    return _save(fig, path)


def plot_loss_curve(records: Sequence[dict], path, keys=("loss", "mse", "siamese")) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    steps = [r["step"] for r in records]
    for key in keys:
        if records and key in records[0]:
            ax.plot(steps, [r[key] for r in records], label=key, lw=1.2)
    ax.set_xlabel("step")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_comparison(rows: Sequence[dict], path, key: str = "accuracy") -> Path:
    """Grouped bars: one group per method, one bar per fine-tuning protocol."""
    names = list(dict.fromkeys(r["name"] for r in rows))
    protocols = list(dict.fromkeys(r.get("protocol", "") for r in rows))
    width = 0.8 / len(protocols)
    colors = ["#3b6ea5", "#d98c3a", "#5a9e5a"]
    fig, ax = plt.subplots(figsize=(6, 3.4))
    for i, protocol in enumerate(protocols):
        vals = {r["name"]: 100.0 * r[key] for r in rows if r.get("protocol", "") == protocol}
        xs = [j + (i - (len(protocols) - 1) / 2) * width for j, n in enumerate(names) if n in vals]
        ys = [vals[n] for n in names if n in vals]
        bars = ax.bar(xs, ys, width, label=protocol or None, color=colors[i % len(colors)])
        for bar, v in zip(bars, ys):
            ax.text(bar.get_x() + bar.get_width() / 2, v + 1, f"{v:.0f}", ha="center", fontsize=7)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, fontsize=8)
    ax.set_ylabel("tracklet accuracy (%)")
    ax.set_ylim(0, 105)
    if any(protocols):
        ax.legend(title="fine-tuning", fontsize=7, title_fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_keyframes(frames: Sequence[np.ndarray], keyframes: Sequence[int], path) -> Path:
    n = len(frames)
    fig, axes = plt.subplots(1, n, figsize=(1.1 * n, 1.5))
    keep = set(keyframes)
    for i, ax in enumerate(np.atleast_1d(axes)):
        ax.imshow(np.clip(frames[i], 0, 1), interpolation="nearest")
        ax.set_title(str(i), fontsize=7, color="green" if i in keep else "red")
        ax.axis("off")
    fig.tight_layout()
    return _save(fig, path)
