"""Report figures, rendered off-screen to files next to the CSV output."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KIND_COLORS = {"roundtrip": "tab:blue", "arbitrage": "tab:red", "boundary": "tab:orange",
               "free": "tab:gray"}


def frontier_figure(utilities, weights, path, labels=None) -> Path:
    """Scatter of sampled expected-utility vectors (first two assets), colored by the first weight."""
    U = np.atleast_2d(np.asarray(utilities, dtype=float))
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    if U.shape[1] >= 2:
        sc = ax.scatter(U[:, 0], U[:, 1], c=W[:, 0], cmap="viridis", s=28, zorder=3)
        order = np.argsort(U[:, 0])
        ax.plot(U[order, 0], U[order, 1], color="0.6", lw=0.8, zorder=2)
        ax.set_xlabel(labels[0] if labels else "E U^1")
        ax.set_ylabel(labels[1] if labels else "E U^2")
        fig.colorbar(sc, ax=ax, label="weight on asset 1")
    else:
        ax.plot(W[:, 0], U[:, 0], "o")
        ax.set_xlabel("weight")
        ax.set_ylabel("E U^1")
    ax.set_title("sampled Pareto frontier")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def equivalence_figure(records, path) -> Path:
    """Robust-NA margins per seed, marked by agreement of the two verdicts."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for kind, color in KIND_COLORS.items():
        rs = [r for r in records if r.kind == kind]
        if not rs:
            continue
        seeds = [r.seed for r in rs]
        margins = [r.nar_margin if r.nar_margin is not None else np.nan for r in rs]
        ax1.scatter(seeds, margins, s=12, color=color, label=kind)
        bad = [r for r in rs if not r.agree]
        if bad:
            ax1.scatter([r.seed for r in bad], [r.nar_margin or 0.0 for r in bad], s=60,
                        facecolors="none", edgecolors="k")
    ax1.set_xlabel("seed")
    ax1.set_ylabel("robust NA margin")
    ax1.legend(fontsize=7)
    kinds = sorted({r.kind for r in records})
    agree = [sum(r.agree for r in records if r.kind == k) for k in kinds]
    total = [sum(1 for r in records if r.kind == k) for k in kinds]
    x = np.arange(len(kinds))
    ax2.bar(x, total, color="0.85", label="instances")
    ax2.bar(x, agree, color=[KIND_COLORS.get(k, "k") for k in kinds], width=0.5, label="agree")
    ax2.set_xticks(x, kinds)
    ax2.set_ylabel("count")
    ax2.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
