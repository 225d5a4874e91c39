"""Figures written next to the CSV outputs. Needs matplotlib (optional extra)."""

from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def available() -> bool:
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True


def funnel_figure(results, sigma2: float, path, n_scatter: int = 1000, seed: int = 0):
    """Scatter of (theta_1, theta_D) plus the theta_D histogram against N(0, sigma2), per metric."""
    from scipy.stats import norm

    plt = _pyplot()
    names = list(results)
    fig, axes = plt.subplots(2, len(names), figsize=(3.2 * len(names), 6), squeeze=False)
    rng = np.random.default_rng(seed)
    sd = np.sqrt(sigma2)
    grid = np.linspace(-4 * sd, 4 * sd, 400)
    for j, name in enumerate(names):
        samples = results[name]
        if samples.shape[0] == 0:
            continue
        pick = rng.choice(samples.shape[0], size=min(n_scatter, samples.shape[0]), replace=False)
        ax = axes[0, j]
        ax.scatter(samples[pick, 0], samples[pick, -1], s=3, alpha=0.5, color="tab:orange")
        ax.set_title(name)
        ax.set_xlabel(r"$\theta_1$")
        ax.set_ylabel(r"$\theta_D$")
        ax.set_xlim(-20, 20)
        ax.set_ylim(-4 * sd, 4 * sd)
        ax = axes[1, j]
        ax.hist(samples[:, -1], bins=80, range=(-4 * sd, 4 * sd), density=True, color="gold")
        ax.plot(grid, norm.pdf(grid, scale=sd), color="tab:blue", lw=1.2)
        ax.set_xlabel(r"$\theta_D$")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def trace_figure(chain, path, coords=(0,)):
    plt = _pyplot()
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 5), sharex=False)
    ax0.plot(chain.steps, chain.u, lw=0.5)
    ax0.set_ylabel("U estimate")
    ax0.set_yscale("symlog")
    for c in coords:
        if c < chain.samples.shape[1]:
            ax1.plot(chain.sample_steps, chain.samples[:, c], lw=0.6, label=f"theta[{c}]")
    ax1.set_xlabel("step")
    ax1.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def reliability_figure(confidences, correct, n_bins: int, path):
    plt = _pyplot()
    conf = np.asarray(confidences)
    correct = np.asarray(correct, dtype=float)
    idx = np.minimum((conf * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    acc = np.bincount(idx, weights=correct, minlength=n_bins)
    edges = np.linspace(0, 1, n_bins + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(counts > 0, acc / counts, np.nan)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.bar(edges[:-1], np.nan_to_num(frac), width=1 / n_bins, align="edge", edgecolor="k", alpha=0.7)
    ax.plot([0, 1], [0, 1], "k--", lw=0.8)
    ax.set_xlabel("confidence")
    ax.set_ylabel("accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
