"""Report figures rendered next to the text/CSV outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# stable PNG bytes: no version/timestamp chunks
_PNG_META = {"Software": None}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_confusion(confusion, path, labels=("ASD", "TD"), title: str = "") -> Path:
    cm = np.asarray(confusion)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 2.8))
        ax.imshow(cm, cmap="Blues", vmin=0)
        for i in range(2):
            for j in range(2):
                ax.text(j, i, str(int(cm[i, j])), ha="center", va="center",
                        color="white" if cm[i, j] > cm.max() / 2 else "black")
        ax.set_xticks([0, 1], labels)
        ax.set_yticks([0, 1], labels)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_history(history: Sequence[dict], path) -> Path:
    epochs = [h["epoch"] for h in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        ax.plot(epochs, [h["loss"] for h in history], color="C0", label="loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        ax2 = ax.twinx()
        ax2.plot(epochs, [h["accuracy"] for h in history], color="C1", label="train accuracy")
        ax2.set_ylim(0, 1.02)
        ax2.set_ylabel("accuracy")
        ax2.spines["top"].set_visible(False)
        lines = ax.get_lines() + ax2.get_lines()
        ax.legend(lines, [l.get_label() for l in lines], loc="center right", frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_ablation(summary: Sequence[dict], path) -> Path:
    """Grouped bars of mean accuracy / UAR (with std whiskers) per row."""
    names = [s["variant"] if len({r["cell"] for r in summary}) == 1 else f'{s["variant"]}\n{s["cell"]}'
             for s in summary]
    x = np.arange(len(summary))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 * len(summary) + 2, 3.0))
        ax.bar(x - 0.18, [s["accuracy_mean"] for s in summary], 0.36,
               yerr=[s["accuracy_std"] for s in summary], capsize=2, label="accuracy")
        ax.bar(x + 0.18, [s["uar_mean"] for s in summary], 0.36,
               yerr=[s["uar_std"] for s in summary], capsize=2, label="UAR")
        ax.set_xticks(x, names)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("held-out score")
        ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        return _save(fig, path)
