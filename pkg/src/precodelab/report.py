"""Figure rendering for the report stage: cCDF curves and pilot sweeps."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_ccdf_figure(table, path, title):
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for label, values in table.values.items():
        ax.plot(table.grid, values, label=label, linewidth=1.4)
    ax.set_xlabel("normalized spectral efficiency, s")
    ax.set_ylabel("P(nSE > s)")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.4)
    ax.set_title(title)
    ax.legend(fontsize=8, loc="lower left")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep_figure(n_p, per_strategy, threshold, path, title):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, values in per_strategy.items():
        ax.plot(n_p, values, marker="o", label=label, linewidth=1.4)
    ax.set_xlabel("number of pilots")
    ax.set_ylabel(f"P(nSE > {threshold:g})")
    ax.set_xticks(list(n_p))
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.4)
    ax.set_title(title)
    ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
