"""Report figures: ROC curves per score and the two-stage training curve."""
from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no timestamps or version strings in the PNG, so reruns are byte-identical
_PNG_META = {"Software": None}

LABELS = {"score_a": r"score$_a$", "score_t": r"score$_t$", "score_d": r"score$_d$",
          "score_delta": r"score$_\Delta$", "fs": "FS"}


def _style(ax):
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.tick_params(direction="out", length=3)


def plot_roc(curves: dict, path) -> Path:
    """``curves`` maps score name to a RocCurve."""
    fig, ax = plt.subplots(figsize=(4.5, 4.2), dpi=120)
    ax.plot([0, 1], [0, 1], color="0.75", lw=0.8, ls="--")
    for name, c in curves.items():
        lw = 2.0 if name == "fs" else 1.1
        ax.step(c.fpr, c.tpr, where="post", lw=lw,
                label=f"{LABELS.get(name, name)}  (AUC {c.auc:.3f})")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right", frameon=False, fontsize=8)
    _style(ax)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_training_curve(rows, path) -> Path:
    """``rows`` are (stage, epoch, train_nll, val_nll) tuples."""
    stages = [s for s in ("lower", "upper") if any(r[0] == s for r in rows)]
    fig, axes = plt.subplots(1, max(1, len(stages)), figsize=(3.6 * max(1, len(stages)), 3.0),
                             dpi=120, squeeze=False)
    for ax, stage in zip(axes[0], stages):
        sel = [r for r in rows if r[0] == stage]
        ep = [r[1] for r in sel]
        ax.plot(ep, [r[2] for r in sel], marker="o", ms=3, lw=1.2, label="train")
        ax.plot(ep, [r[3] for r in sel], marker="s", ms=3, lw=1.2, label="held-out")
        ax.set_title(f"{stage} level", fontsize=10)
        ax.set_xlabel("epoch")
        ax.set_ylabel("NLL per target")
        ax.legend(frameon=False, fontsize=8)
        _style(ax)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)
