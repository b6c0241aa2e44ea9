"""Text/TSV reports and the matplotlib figures written next to them."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .trainkit import EpochRecord, Metrics  # noqa: E402

# keeps PNG bytes independent of the matplotlib version
_PNG_META = {"Software": None}


def _printable(labels: Sequence[str]) -> list[str]:
    """Tick labels; strings the default font cannot draw become '#i'."""
    return [s if all(ord(c) < 0x2E80 for c in s) else f"#{i}" for i, s in enumerate(labels)]


def metrics_text(metrics: Metrics, labels: Sequence[str]) -> str:
    width = max([len("class")] + [len(x) for x in labels])
    lines = [
        f"samples   {int(metrics.confusion.sum())}",
        f"accuracy  {metrics.accuracy:.4f}",
        f"macro P   {metrics.macro_precision:.4f}",
        f"macro R   {metrics.macro_recall:.4f}",
        f"F1        {metrics.f1:.4f}",
        "",
        f"{'class':<{width}}  precision  recall  support",
    ]
    for label, p, r, n in zip(labels, metrics.precision, metrics.recall, metrics.support):
        lines.append(f"{label:<{width}}  {p:9.4f}  {r:6.4f}  {int(n):7d}")
    return "\n".join(lines) + "\n"


def metrics_tsv(metrics: Metrics, labels: Sequence[str]) -> str:
    rows = ["class\tprecision\trecall\tsupport"]
    for label, p, r, n in zip(labels, metrics.precision, metrics.recall, metrics.support):
        rows.append(f"{label}\t{p:.6f}\t{r:.6f}\t{int(n)}")
    return "\n".join(rows) + "\n"


def write_metrics(directory, metrics: Metrics, labels: Sequence[str], figures: bool = False) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [directory / "metrics.txt", directory / "metrics.tsv"]
    written[0].write_text(metrics_text(metrics, labels), encoding="utf-8")
    written[1].write_text(metrics_tsv(metrics, labels), encoding="utf-8")
    if figures:
        written.append(plot_confusion(metrics.confusion, labels, directory / "confusion.png"))
    return written


def plot_learning_curve(records: Sequence[EpochRecord], path) -> Path:
    fig, (ax_loss, ax_f1) = plt.subplots(1, 2, figsize=(8, 3.2))
    for split in sorted({r.split for r in records}):
        rs = [r for r in records if r.split == split]
        epochs = [r.epoch for r in rs]
        ax_loss.plot(epochs, [r.loss for r in rs], marker="o", ms=3, label=split)
        ax_f1.plot(epochs, [r.metrics.f1 for r in rs], marker="o", ms=3, label=split)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy")
    ax_f1.set_xlabel("epoch")
    ax_f1.set_ylabel("macro F1")
    ax_f1.set_ylim(0, 1.02)
    ax_f1.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_confusion(confusion: np.ndarray, labels: Sequence[str], path) -> Path:
    k = len(labels)
    fig, ax = plt.subplots(figsize=(1.2 + 0.5 * k, 1.0 + 0.5 * k))
    ax.imshow(confusion, cmap="Blues")
    ticks = _printable(labels)
    ax.set_xticks(range(k), ticks, rotation=90 if k > 8 else 0)
    ax.set_yticks(range(k), ticks)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    peak = confusion.max() if confusion.size else 0
    for i in range(k):
        for j in range(k):
            ax.text(j, i, int(confusion[i, j]), ha="center", va="center", fontsize=8,
                    color="white" if peak and confusion[i, j] > peak / 2 else "black")
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def attention_rows(stream: str, alpha: np.ndarray) -> list[str]:
    """``stream<TAB>j<TAB>i<TAB>alpha`` rows for one sample's ``[l_aux, lc]`` weights."""
    l_aux, lc = alpha.shape
    return [f"{stream}\t{j}\t{i}\t{alpha[i, j]:.10f}" for j in range(lc) for i in range(l_aux)]


def plot_attention(alphas: dict[str, np.ndarray], path) -> Path:
    fig, axes = plt.subplots(1, len(alphas), figsize=(3.2 * len(alphas), 3), squeeze=False)
    for ax, (stream, alpha) in zip(axes[0], alphas.items()):
        ax.imshow(alpha, aspect="auto", cmap="viridis", vmin=0, vmax=1)
        ax.set_title(stream)
        ax.set_xlabel("character position j")
        ax.set_ylabel("aux position i")
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)
