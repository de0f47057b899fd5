"""Report figures written straight to files (non-interactive backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_history(path, history, title: str = "training"):
    epochs = [r.epoch for r in history]
    fig, ax1 = plt.subplots(figsize=(6, 3.5))
    ax1.plot(epochs, [r.train_loss for r in history], color="tab:blue", label="train KL loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [r.seg_accuracy for r in history], color="tab:red", label="segment accuracy")
    ax2.set_ylabel("accuracy", color="tab:red")
    ax2.set_ylim(0, 1.02)
    ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_confusion(path, cm, class_names, title: str = "confusion"):
    cm = np.asarray(cm)
    fig, ax = plt.subplots(figsize=(1.2 + 0.6 * len(class_names), 1.0 + 0.6 * len(class_names)))
    ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(class_names)), class_names, rotation=45, ha="right")
    ax.set_yticks(range(len(class_names)), class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for (i, j), v in np.ndenumerate(cm):
        ax.text(j, i, str(v), ha="center", va="center", color="white" if v > cm.max() / 2 else "black")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_attention(path, image, a_spa, a_tem, title: str = "attention"):
    """Input log-spectrogram (channel 0), the temporal weights, and the rank-1 mask."""
    fig, axes = plt.subplots(3, 1, figsize=(6, 6.5), sharex=True,
                             gridspec_kw={"height_ratios": [2, 1, 2]})
    axes[0].imshow(image, origin="lower", aspect="auto", cmap="magma")
    axes[0].set_ylabel("band")
    axes[1].plot(a_tem)
    axes[1].set_ylabel("a_tem")
    axes[2].imshow(np.outer(a_spa, a_tem), origin="lower", aspect="auto", cmap="viridis")
    axes[2].set_ylabel("feature")
    axes[2].set_xlabel("frame")
    axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
