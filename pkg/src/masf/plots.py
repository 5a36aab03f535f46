"""Figure rendering for CLI reports.

Only the command-line front end imports this module; library scoring and
calibration paths stay free of matplotlib so headless deployments can
skip it entirely.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_qq", "render_score_histogram", "render_bench"]


def render_qq(rows: np.ndarray, path, title: str = "held-out p-values") -> str:
    """Quantile-quantile plot of p-values against Uniform[0, 1]."""
    rows = np.asarray(rows, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.plot([0, 1], [0, 1], color="0.6", lw=1.0, ls="--", label="exact uniform")
    ax.plot(rows[:, 0], rows[:, 1], color="C0", lw=1.4, label="observed")
    ax.set_xlabel("uniform quantile")
    ax.set_ylabel("empirical quantile")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_title(title)
    ax.legend(loc="upper left", frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def render_score_histogram(in_scores, out_scores, path, title: str = "detection scores") -> str:
    """Overlaid in/out score histograms on [0, 1]."""
    bins = np.linspace(0.0, 1.0, 41)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.hist(np.asarray(in_scores, dtype=np.float64), bins=bins, alpha=0.55,
            label="in-distribution", color="C0", density=True)
    ax.hist(np.asarray(out_scores, dtype=np.float64), bins=bins, alpha=0.55,
            label="out-of-distribution", color="C3", density=True)
    ax.set_xlabel("final p-value")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def render_bench(results, path, title: str = "per-layer statistic cost") -> str:
    """Log-scale bar chart of mean per-layer cost with SD whiskers."""
    names = [r.statistic for r in results]
    means = np.array([r.single_mean_ms for r in results], dtype=np.float64)
    sds = np.array([r.single_sd_ms for r in results], dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    pos = np.arange(len(names))
    # clip the lower whisker so the log axis never sees zero or below
    lower = np.minimum(sds, means * 0.999)
    ax.bar(pos, means, yerr=[lower, sds], capsize=4, color="C0", alpha=0.8)
    ax.set_xticks(pos)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_yscale("log")
    ax.set_ylabel("mean time per layer (ms)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
