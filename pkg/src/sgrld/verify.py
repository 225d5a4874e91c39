"""Named oracle checks run by ``sgrld verify``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .diagnostics import ece, gradient_check, ks_statistic, verify_metric, verify_monge_gamma
from .metrics import MetricKind, inverse_root
from .sampler import ChainConfig, run_chain
from .targets import FunnelTarget, GaussianTarget, MlpTarget, PriorSpec, two_cluster


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    mode: str = "max"  # value must stay below threshold; "exact" means equal


def _below(name, value, threshold):
    return CheckResult(name, float(value), threshold, bool(value < threshold))


def _metric_checks(trials: int, seed: int):
    out = []
    for kind in MetricKind:
        shampoo = kind is MetricKind.SHAMPOO
        res = verify_metric(kind, 64, trials, seed)
        tol_apply = 1e-8 if shampoo else 1e-10
        tol_inverse = 1e-7 if shampoo else 1e-10
        out.append(_below(f"{kind.value}.apply_inv", res["inv"], tol_apply))
        out.append(_below(f"{kind.value}.apply_inv_sqrt", res["inv_sqrt"], tol_apply))
        out.append(_below(f"{kind.value}.inverse_consistency", res["inverse"], tol_inverse))
        out.append(_below(f"{kind.value}.root_consistency", res["root"], 1e-9))
    return out


def _identity_reduction(steps: int = 2000):
    target = FunnelTarget(noise_std=1.0)
    a = run_chain(
        ChainConfig(metric={"kind": "identity"}, learning_rate=1e-3, total_steps=steps,
                    burn_in_steps=0, thinning=1, seed=7),
        target,
    )
    b = run_chain(
        ChainConfig(metric={"kind": "monge", "alpha2": 0.0, "lam": 0.7}, learning_rate=1e-3,
                    total_steps=steps, burn_in_steps=0, thinning=1, seed=7),
        target,
    )
    mismatches = int(np.sum(a.samples != b.samples))
    return CheckResult("monge.identity_reduction", mismatches, 0, mismatches == 0, "exact")


def _gradient_checks(points: int, seed: int):
    rng = np.random.default_rng(seed)
    out = []
    funnel = FunnelTarget(noise_std=0.0)
    pts = [np.r_[rng.normal(0, 2, 1), rng.uniform(-4, 4)] for _ in range(points)]
    out.append(_below("grad.funnel", gradient_check(funnel.log_potential, funnel.full_grad, pts), 1e-5))

    gauss = GaussianTarget(rng.normal(size=4), rng.uniform(0.5, 2.0, 4))
    pts = [rng.normal(size=4) for _ in range(points)]
    out.append(_below("grad.gaussian", gradient_check(gauss.log_potential, gauss.full_grad, pts), 1e-5))

    data = two_cluster(5, 3.0, seed)
    for prior in ("gaussian", "horseshoe"):
        mlp = MlpTarget([2, 4, 2], data, PriorSpec(prior, 1.0), activation="tanh")
        pts = [rng.normal(0, 0.7, mlp.dim) for _ in range(points)]
        err = gradient_check(mlp.log_potential, mlp.full_grad, pts)
        out.append(_below(f"grad.mlp_{prior}", err, 1e-5))
    return out


def run_checks(trials: int = 100, seed: int = 0) -> list[CheckResult]:
    checks = _metric_checks(trials, seed)

    checks.append(_below("monge.gamma_closed_form", verify_monge_gamma(3, 20, 1e-5, seed), 1e-4))
    checks.append(_identity_reduction())

    e = ece([0.9, 0.6], [True, False], n_bins=2)
    checks.append(CheckResult("ece.hand_example", e, 0.25, e == 0.25, "exact"))

    m = 100
    q = norm.ppf((np.arange(1, m + 1) - 0.5) / m)
    ks = ks_statistic(q, norm.cdf)
    checks.append(_below("ks.exact_quantiles", abs(ks - 0.005), 1e-12))

    M = np.array([[2.0, 1.0], [1.0, 2.0]])
    R = inverse_root(M, 2, 1e-12)
    checks.append(_below("linalg.inverse_root", np.max(np.abs(np.linalg.inv(R @ R) - M)), 1e-10))

    checks.extend(_gradient_checks(20, seed))
    return checks
