"""Figure rendering (matplotlib, Agg backend); every function writes one file and returns its path."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .synthgen import CLASS_NAMES  # noqa: E402

plt.rcParams["svg.hashsalt"] = "sleepsense"  # stable element ids across runs


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, bbox_inches="tight", metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def confusion(conf: np.ndarray, path) -> Path:
    conf = np.asarray(conf)
    rows = conf.sum(axis=1, keepdims=True)
    frac = np.divide(conf, rows, out=np.zeros(conf.shape), where=rows > 0)
    fig, ax = plt.subplots(figsize=(5.5, 4.8))
    im = ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
    for i in range(conf.shape[0]):
        for j in range(conf.shape[1]):
            ax.text(j, i, f"{frac[i, j]:.2f}\n({conf[i, j]})", ha="center", va="center", fontsize=7,
                    color="white" if frac[i, j] > 0.6 else "black")
    ax.set_xticks(range(len(CLASS_NAMES)), CLASS_NAMES, rotation=45, ha="right")
    ax.set_yticks(range(len(CLASS_NAMES)), CLASS_NAMES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def roc(curves: dict[int, tuple[np.ndarray, np.ndarray]], aucs, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.8, 4.5))
    for c, (fpr, tpr) in curves.items():
        label = CLASS_NAMES[c] + (f" (AUC {aucs[c]:.3f})" if aucs[c] is not None else "")
        ax.plot(fpr, tpr, lw=1.3, label=label)
    ax.plot([0, 1], [0, 1], "k:", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(fontsize=7, loc="lower right")
    return _save(fig, path)


def saliency(signal: np.ndarray, values: np.ndarray, path, title: str = "", rate: float = 100.0) -> Path:
    """Signal line over a band whose opacity follows saliency / max(saliency)."""
    signal = np.asarray(signal, dtype=float)
    values = np.asarray(values, dtype=float)
    peak = values.max()
    alpha = values / peak if peak > 0 else np.zeros_like(values)
    t = np.arange(len(signal)) / rate
    fig, ax = plt.subplots(figsize=(8, 2.4))
    lo, hi = signal.min(), signal.max()
    ax.imshow(alpha[None, :], aspect="auto", cmap="Reds", vmin=0, vmax=1,
              extent=(t[0], t[-1] + 1 / rate, lo, hi), origin="lower")
    ax.plot(t, signal, color="k", lw=0.7)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("z-score")
    if title:
        ax.set_title(title, fontsize=9)
    return _save(fig, path)


def embedding(points: np.ndarray, labels, path, title: str = "") -> Path:
    points = np.asarray(points)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(4.8, 4.5))
    for c in np.unique(labels):
        m = labels == c
        ax.scatter(points[m, 0], points[m, 1], s=6, label=CLASS_NAMES[int(c)])
    ax.set_xticks([])
    ax.set_yticks([])
    ax.legend(fontsize=7, markerscale=2)
    if title:
        ax.set_title(title, fontsize=9)
    return _save(fig, path)


def history(rows: list[dict], path) -> Path:
    ep = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ep, [r["loss"] for r in rows], label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(ep, [r["val_accuracy"] for r in rows], color="tab:orange", label="val accuracy")
    ax2.set_ylabel("val accuracy")
    fig.legend(fontsize=7, loc="center right")
    return _save(fig, path)


def hpo_trials(rows: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    sc = ax.scatter([r["learning_rate"] for r in rows], [r["val_accuracy"] for r in rows],
                    c=[r["d_model"] for r in rows], cmap="viridis", s=25)
    ax.set_xscale("log")
    ax.axhline(0.9, color="k", ls=":", lw=0.8)
    ax.set_xlabel("learning rate")
    ax.set_ylabel("val accuracy")
    fig.colorbar(sc, ax=ax, label="d_model")
    return _save(fig, path)


def flops_bars(before: dict, after: dict, path) -> Path:
    parts = ["encoder", "attention", "resnet", "head"]
    x = np.arange(len(parts))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(x - 0.2, [before[p] / 1e6 for p in parts], 0.4, label="baseline")
    ax.bar(x + 0.2, [after[p] / 1e6 for p in parts], 0.4, label="pruned")
    ax.set_xticks(x, parts)
    ax.set_ylabel("MFLOPs")
    ax.legend(fontsize=7)
    return _save(fig, path)


def transfer_curve(summary_rows: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    shots = [r["shots"] for r in summary_rows]
    for key, label in (("transfer", "fine-tuned"), ("scratch", "from scratch")):
        ax.errorbar(shots, [r[f"{key}_mean"] for r in summary_rows],
                    yerr=[0 if np.isnan(r[f"{key}_se"]) else r[f"{key}_se"] for r in summary_rows],
                    marker="o", capsize=3, label=label)
    ax.set_xlabel("shots per class")
    ax.set_ylabel("target accuracy")
    ax.legend(fontsize=7)
    return _save(fig, path)
