"""PNG figures for sweep results, written next to the CSV tables (Agg backend, no display)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_drop_sweep", "plot_retraining", "plot_superres", "plot_training_curve"]

STYLE = {
    "figure.figsize": (4.5, 3.2),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}
ARM_COLORS = {
    "sbtt": "tab:red", "frame": "tab:blue", "smooth": "0.4",
    "trained_full_run_sparse": "0.4", "trained_sparse": "tab:blue", "retrained_sparse": "tab:red",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps reruns byte-stable
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_drop_sweep(rows, path) -> Path:
    """Decoding R² against the fraction of dropped samples."""
    rows = sorted(rows, key=lambda r: r[0])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot([r[0] for r in rows], [r[1] for r in rows], "o-", color="k")
        ax.set_xlabel("fraction of samples dropped")
        ax.set_ylabel("latent decoding $R^2$")
        ax.set_ylim(top=1.0)
        return _save(fig, path)


def plot_superres(rows, path) -> Path:
    """R² per arm against the Lorenz Z spectrum peak."""
    by_arm = defaultdict(list)
    for ds, peak, arm, r2, *_ in rows:
        by_arm[arm].append((peak, r2))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for arm, pts in by_arm.items():
            pts.sort()
            ax.plot(*zip(*pts), "o-", label=arm, color=ARM_COLORS.get(arm))
        ax.set_xlabel("Lorenz Z spectrum peak (Hz)")
        ax.set_ylabel("latent decoding $R^2$")
        ax.legend()
        return _save(fig, path)


def plot_retraining(rows, path) -> Path:
    """Grouped bars: one group per drop fraction, one bar per arm."""
    fracs = sorted({r[0] for r in rows})
    arms = list(dict.fromkeys(r[1] for r in rows))
    val = {(r[0], r[1]): r[2] for r in rows}
    width = 0.8 / max(len(arms), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(fracs))
        for i, arm in enumerate(arms):
            ax.bar(x + i * width, [val.get((f, arm), np.nan) for f in fracs], width,
                   label=arm.replace("_", " "), color=ARM_COLORS.get(arm))
        ax.set_xticks(x + width * (len(arms) - 1) / 2, [f"{f:g}" for f in fracs])
        ax.set_xlabel("fraction of samples dropped")
        ax.set_ylabel("latent decoding $R^2$")
        ax.legend()
        return _save(fig, path)


def plot_training_curve(log_rows, path) -> Path:
    """Training loss and smoothed validation NLL per epoch."""
    epochs = [r[0] for r in log_rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(epochs, [r[1] for r in log_rows], label="train loss")
        ax.plot(epochs, [r[6] for r in log_rows], label="val NLL (smoothed)")
        ax.set_xlabel("epoch")
        ax.legend()
        return _save(fig, path)
