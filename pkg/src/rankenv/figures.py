"""Figure rendering for the experiment CSVs.

Each report command writes a PNG next to its delimited output; the plots
use the same records the CSVs carry, so the figure is always reproducible
from the data file alone.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import BiasSummary, RunRecord

_STYLE = {"murank": ("tab:green", "envelope (rank penalty)"),
          "fixedrank": ("tab:blue", "envelope (rank bound)"),
          "nuclear": ("tab:orange", "nuclear norm")}


def plot_rank_vs_fit(records: list[RunRecord], path) -> None:
    """Achieved rank (x) against data fit (y), one dot per solve."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for kind in sorted({r.reg_kind for r in records}):
        color, label = _STYLE.get(kind, ("tab:gray", kind))
        xs = [r.rank for r in records if r.reg_kind == kind and r.rank >= 0]
        ys = [r.data_fit for r in records if r.reg_kind == kind and r.rank >= 0]
        ax.plot(xs, ys, "o", ms=4, alpha=0.7, color=color, label=label)
    ax.set_xlabel("rank")
    ax.set_ylabel(r"data fit $\|AX-b\|^2$")
    ax.set_yscale("symlog", linthresh=1e-10)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_noise_sweep(records: list[RunRecord], path) -> None:
    """Two panels: fit vs noise level and ground-truth distance vs noise level."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for kind in sorted({r.reg_kind for r in records}):
        color, label = _STYLE.get(kind, ("tab:gray", kind))
        recs = sorted((r for r in records if r.reg_kind == kind),
                      key=lambda r: r.noise_norm)
        lv = [r.noise_norm for r in recs]
        ax1.plot(lv, [r.data_fit for r in recs], "-o", ms=4, color=color,
                 label=label)
        ax2.plot(lv, [r.gt_dist for r in recs], "-o", ms=4, color=color,
                 label=label)
    ax1.set_xlabel(r"noise level $\|\epsilon\|$")
    ax1.set_ylabel(r"data fit $\|AX-b\|^2$")
    ax2.set_xlabel(r"noise level $\|\epsilon\|$")
    ax2.set_ylabel(r"ground truth distance $\|X-X_0\|$")
    ax1.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_bias(summary: BiasSummary, path, n_entries: int = 12,
              seed: int = 0) -> None:
    """Estimated means of X - X0 with 2-standard-deviation bars.

    Shows a random subset of entries, both estimators side by side.
    """
    n1, n2 = summary.mean_env.shape
    rng = np.random.default_rng(seed)
    picks = rng.choice(n1 * n2, size=min(n_entries, n1 * n2), replace=False)
    idx = np.arange(len(picks))
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for which, off in (("env", -0.15), ("nuc", 0.15)):
        mean = (summary.mean_env if which == "env" else summary.mean_nuc).ravel()[picks]
        sd = (summary.sd_env if which == "env" else summary.sd_nuc).ravel()[picks]
        color, label = _STYLE["fixedrank" if which == "env" else "nuclear"]
        ax.errorbar(idx + off, mean, yerr=2 * sd, fmt="o", ms=4, color=color,
                    capsize=3, label=label)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("matrix entry (sampled)")
    ax.set_ylabel(r"mean of $X-X_0$ ($\pm$ 2 sd)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
