"""Predictive ensemble scores, calibration, KS distance and metric oracle checks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .metrics import MetricKind, MetricSpec, Which, make_metric, monge_gamma
from .tensorcore import ParamRegistry


@dataclass
class PredictiveEnsemble:
    member_probs: np.ndarray  # (n_samples, n_points, n_classes)
    mean_probs: np.ndarray  # (n_points, n_classes)

    def log_prob(self, y) -> float:
        """Mean over test points of log ensemble probability of the true class."""
        y = np.asarray(y)
        p = self.mean_probs[np.arange(len(y)), y]
        with np.errstate(divide="ignore"):
            return float(np.mean(np.log(p)))

    def member_log_prob(self, index: int, y) -> float:
        y = np.asarray(y)
        p = self.member_probs[index, np.arange(len(y)), y]
        with np.errstate(divide="ignore"):
            return float(np.mean(np.log(p)))

    def accuracy(self, y) -> float:
        return float(np.mean(np.argmax(self.mean_probs, axis=1) == np.asarray(y)))

    def confidences(self):
        return np.max(self.mean_probs, axis=1)


def ensemble_predict(samples: Sequence[np.ndarray], target, X) -> PredictiveEnsemble:
    """Average softmax outputs of every retained parameter sample."""
    samples = list(samples)
    if not samples:
        raise ValueError("ensemble needs at least one sample")
    probs = np.stack([target.predict_proba(theta, X) for theta in samples])
    return PredictiveEnsemble(probs, probs.mean(axis=0))


def ece(confidences, correct, n_bins: int = 10) -> float:
    """Expected calibration error over equal-width bins of [0, 1].

    Bins are [i/K, (i+1)/K) except the last, which includes 1. Empty bins
    contribute nothing.
    """
    if n_bins < 1:
        raise ValueError("need at least one bin")
    conf = np.asarray(confidences, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if conf.shape != correct.shape:
        raise ValueError("confidences and correctness flags differ in length")
    if conf.size == 0:
        return 0.0
    if np.any((conf < 0) | (conf > 1)):
        raise ValueError("confidences must lie in [0, 1]")
    idx = np.minimum((conf * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    nz = counts > 0
    gaps = np.abs(acc_sum[nz] - conf_sum[nz]) / counts[nz]
    return float(np.sum(counts[nz] / conf.size * gaps))


def ks_statistic(samples, cdf: Callable) -> float:
    """sup_x |F_n(x) - F(x)| for the empirical CDF of `samples`."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    m = x.size
    if m == 0:
        raise ValueError("KS statistic needs at least one sample")
    F = np.asarray(cdf(x), dtype=np.float64)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - F), np.max(F - (i - 1) / m)))


# ---------------------------------------------------------------- oracle checks


def rel_err(a, b) -> float:
    """max |a - b| scaled by max |b|."""
    a = np.asarray(a)
    b = np.asarray(b)
    scale = np.max(np.abs(b)) if b.size else 0.0
    diff = np.max(np.abs(a - b)) if b.size else 0.0
    return float(diff / scale) if scale > 0 else float(diff)


SHAMPOO_SHAPES = [(2, 3), (4,), (3, 4, 2)]


def _random_registry(kind: MetricKind, D: int, rng: np.random.Generator) -> ParamRegistry:
    if kind is MetricKind.SHAMPOO:
        return ParamRegistry([(f"p{i}", s) for i, s in enumerate(SHAMPOO_SHAPES)])
    # split D into up to four layers of random size
    n_layers = int(rng.integers(1, min(4, D) + 1))
    cuts = np.sort(rng.choice(np.arange(1, D), size=n_layers - 1, replace=False)) if n_layers > 1 else []
    bounds = [0, *cuts, D]
    return ParamRegistry([(f"l{i}", (int(bounds[i + 1] - bounds[i]),)) for i in range(n_layers)])


def _random_spec(kind: MetricKind, rng: np.random.Generator) -> MetricSpec:
    if kind is MetricKind.MONGE:
        return MetricSpec(kind, lam=float(rng.uniform(0.5, 0.99)), alpha2=float(rng.uniform(0.01, 2.0)))
    if kind is MetricKind.SHAMPOO:
        return MetricSpec(kind, lam=float(rng.uniform(0.5, 0.99)), eps=1e-8, refresh_interval=1)
    if kind in (MetricKind.RMSPROP, MetricKind.WENZEL):
        return MetricSpec(kind, lam=float(rng.uniform(0.5, 0.99)), eps=1e-8, update_period=1)
    return MetricSpec(kind)


def verify_metric(kind, D: int = 32, trials: int = 100, seed: int = 0) -> dict:
    """Max residuals of matrix-free applications against the dense metric.

    Keys: ``inv`` (apply_inv vs G^-1 x), ``inv_sqrt`` (apply_inv_sqrt vs
    G^-1/2 x), ``inverse`` (|G G^-1 - I|), ``root`` (G^-1/2 applied twice vs
    G^-1 x).
    """
    kind = MetricKind.parse(kind)
    rng = np.random.default_rng(seed)
    res = {"inv": 0.0, "inv_sqrt": 0.0, "inverse": 0.0, "root": 0.0}
    for _ in range(trials):
        d = int(rng.integers(2, D + 1))
        reg = _random_registry(kind, d, rng)
        metric = make_metric(_random_spec(kind, rng), reg)
        n_obs = int(rng.integers(1, 30)) if kind is not MetricKind.SHAMPOO else int(rng.integers(30, 60))
        scale = 10.0 ** rng.uniform(-1, 1)
        for t in range(n_obs):
            metric.observe(scale * rng.standard_normal(reg.dim), t)
        metric.refresh(0)
        x = rng.standard_normal(reg.dim)
        G = metric.dense(Which.G)
        Ginv = metric.dense(Which.INV)
        Gis = metric.dense(Which.INV_SQRT)
        inv_x = metric.apply_inv(x)
        res["inv"] = max(res["inv"], rel_err(inv_x, Ginv @ x))
        res["inv_sqrt"] = max(res["inv_sqrt"], rel_err(metric.apply_inv_sqrt(x), Gis @ x))
        res["inverse"] = max(res["inverse"], float(np.max(np.abs(G @ Ginv - np.eye(reg.dim)))))
        res["root"] = max(res["root"], rel_err(metric.apply_inv_sqrt(metric.apply_inv_sqrt(x)), inv_x))
    return res


def _dense_monge_inv(m, alpha2):
    return np.linalg.inv(np.eye(m.size) + alpha2 * np.outer(m, m))


def gamma_finite_difference(m0, hess, alpha2, lam, fd_step=1e-5) -> np.ndarray:
    """sum_k d/dtheta_k (G^-1)_jk by central differences.

    The moving average is modelled locally as m(theta) = m0 + (1 - lam) * hess @ theta
    around theta = 0, which is how one step of the EMA responds to a change in
    the stochastic gradient field.
    """
    m0 = np.asarray(m0, dtype=np.float64)
    D = m0.size
    out = np.zeros(D)
    for k in range(D):
        e = np.zeros(D)
        e[k] = fd_step
        plus = _dense_monge_inv(m0 + (1.0 - lam) * hess @ e, alpha2)
        minus = _dense_monge_inv(m0 - (1.0 - lam) * hess @ e, alpha2)
        out += (plus[:, k] - minus[:, k]) / (2.0 * fd_step)
    return out


def verify_monge_gamma(D: int = 3, trials: int = 20, fd_step: float = 1e-5, seed: int = 0, alpha2=None) -> float:
    """Max relative error between the closed-form Gamma and finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        A = rng.standard_normal((D, D))
        A = 0.5 * (A + A.T)
        theta = rng.standard_normal(D)
        m = A @ theta
        a2 = float(rng.uniform(0.1, 2.0)) if alpha2 is None else alpha2
        lam = float(rng.uniform(0.0, 0.95))
        closed = monge_gamma(m, A, a2, lam)
        fd = gamma_finite_difference(m, A, a2, lam, fd_step)
        if np.max(np.abs(fd)) == 0.0 and np.max(np.abs(closed)) == 0.0:
            continue
        worst = max(worst, rel_err(closed, fd))
    return worst


@dataclass
class DiagnosticsReport:
    log_prob: float = float("nan")
    accuracy: float = float("nan")
    ece: float = float("nan")
    ks: float = float("nan")
    oracle_residuals: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def fd_gradient(f: Callable, theta, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with per-coordinate step rel_step * max(1, |theta_i|)."""
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        h = rel_step * max(1.0, abs(theta[i]))
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (f(up) - f(dn)) / (up[i] - dn[i])
    return out


def gradient_check(f: Callable, grad: Callable, points, rel_step: float = 1e-6) -> float:
    """Max over points of the normwise relative error of `grad` against central differences."""
    worst = 0.0
    for theta in points:
        worst = max(worst, rel_err(grad(theta), fd_gradient(f, theta, rel_step)))
    return worst
