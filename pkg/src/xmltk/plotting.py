"""Report figures written next to the tabular outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "xmltk",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)


def plot_micro_comparison(results: dict, path, metrics=("muP", "muR", "muF1")):
    """Grouped bars of micro precision / recall / F1, one group per system."""
    labels = {"muP": "µP", "muR": "µR", "muF1": "µF1"}
    names = list(results)
    x = np.arange(len(names))
    width = 0.8 / len(metrics)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        for j, m in enumerate(metrics):
            vals = [results[n][m] for n in names]
            bars = ax.bar(x + (j - (len(metrics) - 1) / 2) * width, vals, width, label=labels.get(m, m))
            ax.bar_label(bars, fmt="%.3f", fontsize=6, padding=1)
        ax.set_xticks(x, names)
        ax.set_ylim(0, 1.08)
        ax.set_ylabel("score")
        ax.legend(ncols=len(metrics), loc="lower right", frameon=False)
        _save(fig, path)


def plot_metric_grid(results: dict, path, rows=("muF1", "muP", "muR", "MaF1", "MaP", "MaR", "EbF1", "EbP", "EbR")):
    """Heat map of every metric for every system."""
    names = list(results)
    data = np.array([[results[n][r] for n in names] for r in rows])
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(names), 3.6))
        im = ax.imshow(data, vmin=0, vmax=1, cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(names)), names)
        ax.set_yticks(range(len(rows)), [r.replace("mu", "µ") for r in rows])
        for i in range(data.shape[0]):
            for j in range(data.shape[1]):
                ax.text(j, i, f"{data[i, j]:.3f}", ha="center", va="center", fontsize=7,
                        color="white" if data[i, j] < 0.6 else "black")
        fig.colorbar(im, ax=ax, fraction=0.05)
        _save(fig, path)


def read_loss_log(path) -> tuple[np.ndarray, np.ndarray]:
    steps, losses = [], []
    with open(path, encoding="utf-8") as fh:
        next(fh, None)
        for line in fh:
            s, l = line.split("\t")
            steps.append(int(s))
            losses.append(float(l))
    return np.array(steps), np.array(losses)


def plot_loss_curve(steps, losses, path, window: int = 25):
    """Raw per-step training loss with a trailing moving average."""
    steps = np.asarray(steps)
    losses = np.asarray(losses)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.plot(steps, losses, lw=0.6, alpha=0.4, label="batch loss")
        if losses.size >= window:
            smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
            ax.plot(steps[window - 1:], smooth, lw=1.4, label=f"mean of {window}")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_threshold_sweep(thresholds, f1, chosen, path):
    """Development micro F1 against the ensemble decision threshold."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.plot(thresholds, f1, lw=1.2)
        ax.axvline(chosen, ls="--", lw=0.8, color="0.3")
        ax.set_xlabel("decision threshold")
        ax.set_ylabel("µF1")
        _save(fig, path)
