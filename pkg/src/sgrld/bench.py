"""Funnel benchmark: four metrics with their tuned funnel hyperparameters."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diagnostics import ks_statistic
from .sampler import ChainAbort, ChainConfig, default_workers, run_chain
from .targets import FunnelTarget

FUNNEL_SIGMA2 = 9.0
FUNNEL_NOISE_STD = 1.0
FUNNEL_BURN_IN = 1000

# (metric hyperparameters, constant step size)
FUNNEL_PRESETS = {
    "identity": ({"kind": "identity"}, 0.001),
    "rmsprop": ({"kind": "rmsprop", "lam": 0.995, "eps": 0.0}, 0.0025),
    "monge": ({"kind": "monge", "alpha2": 0.1, "lam": 0.7}, 0.003),
    "shampoo": ({"kind": "shampoo", "lam": 0.9995, "eps": 1e-6, "refresh_interval": 1}, 0.003),
}


@dataclass
class FunnelResult:
    name: str
    samples: np.ndarray
    ks: float
    theta_d_min: float
    theta_d_mean: float
    safeguard_count: int
    step_size: float
    wall_time: float
    aborted: Optional[str] = None


def funnel_chain_config(name: str, n_samples: int, seed: int = 0) -> ChainConfig:
    spec, lr = FUNNEL_PRESETS[name]
    return ChainConfig(
        metric=dict(spec),
        learning_rate=lr,
        total_steps=FUNNEL_BURN_IN + n_samples,
        burn_in_steps=FUNNEL_BURN_IN,
        thinning=1,
        seed=seed,
        safeguard_threshold=1000.0,
    )


def _run_one(args) -> FunnelResult:
    name, n_samples, seed = args
    target = FunnelTarget(dim=2, sigma2=FUNNEL_SIGMA2, noise_std=FUNNEL_NOISE_STD)
    cfg = funnel_chain_config(name, n_samples, seed)
    aborted = None
    try:
        chain = run_chain(cfg, target)
    except ChainAbort as exc:
        chain = exc.chain
        aborted = str(exc)
    theta_d = chain.samples[:, -1]
    if theta_d.size:
        ks = ks_statistic(theta_d, target.marginal_cdf)
        lo, mean = float(theta_d.min()), float(theta_d.mean())
    else:
        ks, lo, mean = 1.0, math.nan, math.nan
    return FunnelResult(
        name, chain.samples, ks, lo, mean, chain.safeguard_count, chain.step_size,
        chain.wall_time, aborted,
    )


def run_funnel_bench(
    n_samples: int = 200_000, seed: int = 0, metrics=tuple(FUNNEL_PRESETS), workers: Optional[int] = None
) -> dict[str, FunnelResult]:
    jobs = [(name, n_samples, seed) for name in metrics]
    workers = min(len(jobs), workers or default_workers())
    if workers <= 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    return {r.name: r for r in results}


def marginal_histogram(theta_d, sigma2: float = FUNNEL_SIGMA2, bins: int = 60, span: float = 4.0):
    """Rows (bin_left, bin_right, count, true_density) over +-span standard deviations.

    true_density is the N(0, sigma2) probability mass of the bin divided by its width.
    """
    from scipy.stats import norm

    sd = math.sqrt(sigma2)
    edges = np.linspace(-span * sd, span * sd, bins + 1)
    counts, _ = np.histogram(theta_d, bins=edges)
    mass = np.diff(norm.cdf(edges, scale=sd))
    dens = mass / np.diff(edges)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i]), float(dens[i])) for i in range(bins)]
