"""Optional PNG figures. matplotlib is imported lazily so the core has no plotting dependency."""
from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_ratio_trace(record, path, title: str = "") -> None:
    """Per-step audio discrepancy ratio with the balance line at 1."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(record.trace["step"], record.trace["rho_a"], lw=0.8, label="rho_a")
    ax.axhline(1.0, color="k", ls="--", lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("discrepancy ratio")
    ax.set_title(title)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_comparison(header, rows, path) -> None:
    """Grouped bars of mean test and probe accuracies with std error bars."""
    plt = _pyplot()
    metrics = ["test_acc", "probe_a", "probe_v"]
    x = np.arange(len(rows))
    width = 0.8 / len(metrics)
    fig, ax = plt.subplots(figsize=(max(5, 1.6 * len(rows)), 3.5))
    for j, key in enumerate(metrics):
        mi, si = header.index(f"{key}_mean"), header.index(f"{key}_std")
        ax.bar(x + j * width, [r[mi] for r in rows], width, yerr=[r[si] for r in rows], label=key)
    ax.set_xticks(x + width, [r[0] for r in rows])
    ax.set_ylabel("accuracy")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
