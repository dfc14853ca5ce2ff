"""Figures for training curves, the model comparison and the label sweep (written to files)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import smooth  # noqa: E402


def plot_loss_curves(history, path, window=50, title="training loss"):
    h = np.asarray(history, dtype=np.float64).reshape(-1, 4)
    fig, ax = plt.subplots(figsize=(6, 4))
    for col, label in ((1, "L"), (2, "L_MS"), (3, "L_PAT")):
        ax.plot(h[:, 0], smooth(h[:, col], window), label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel(f"loss ({window}-step mean)")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_comparison(benchmark, path, models=("flat", "attribute_specific", "hard_at", "pat")):
    reports = benchmark["reports"]
    means, stds = [], []
    for m in models:
        accs = [r[m].accuracy for r in reports.values()]
        means.append(np.mean(accs))
        stds.append(np.std(accs))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(len(models)), means, yerr=stds, capsize=4, color="0.6")
    ax.set_xticks(np.arange(len(models)), models)
    ax.set_ylabel("test accuracy")
    lo = max(0.0, min(means) - 0.1)
    ax.set_ylim(lo, min(1.0, max(means) + 0.05))
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_sweep(rows, path, reference=None):
    f = [r.fraction for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(f, [r.mean for r in rows], yerr=[r.std for r in rows], marker="o", capsize=3, label="pat")
    if reference is not None:
        ax.axhline(reference, color="0.4", linestyle="--", label="flat")
    ax.set_xlabel("fraction of attribute-labeled samples")
    ax.set_ylabel("test accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
