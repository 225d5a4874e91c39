"""Monge metric G = I + alpha^2 * m m^T, with m an EMA of stochastic gradients.

Both G^-1 and G^-1/2 are identity-plus-rank-one, so applying them to a
vector costs two O(D) passes (a dot product and an axpy).
"""

from __future__ import annotations

import math

import numpy as np

from ..tensorcore import EmaState
from .base import Metric, MetricKind, Which


def monge_f(n, norm_sq: float, alpha2: float) -> float:
    """Scalar coefficient c such that G^n = I + c * m m^T, for n in {-1, -1/2}.

    The -1/2 branch uses the cancellation-free form
    -alpha2 / (s * (1 + s)) with s = sqrt(1 + alpha2 * norm_sq), which equals
    (1/norm_sq) * (1/s - 1) and tends to -alpha2/2 as norm_sq -> 0.
    """
    if norm_sq < 0:
        raise ValueError("norm_sq must be non-negative")
    u = alpha2 * norm_sq
    if n == -1:
        return -alpha2 / (1.0 + u)
    if n == -0.5:
        s = math.sqrt(1.0 + u)
        return -alpha2 / (s * (1.0 + s))
    raise ValueError(f"unsupported power {n!r}; expected -1 or -0.5")


class MongeMetric(Metric):
    kind = MetricKind.MONGE

    def __init__(self, registry, spec):
        super().__init__(registry, spec)
        self.alpha2 = float(spec.alpha2)
        self.grad_ema = EmaState.zeros(self.dim, spec.lam)
        self._coef = None

    @property
    def m(self) -> np.ndarray:
        return self.grad_ema.value

    def observe(self, g_hat, step):
        self._check(g_hat)
        self.grad_ema.update(g_hat)
        self._coef = None

    def _coefs(self):
        if self._coef is None:
            m = self.grad_ema.value
            s = float(np.dot(m, m))
            self._coef = (monge_f(-1, s, self.alpha2), monge_f(-0.5, s, self.alpha2))
        return self._coef

    def apply_inv(self, x):
        self._check(x)
        if self.alpha2 == 0.0:
            return x
        m = self.grad_ema.value
        return x + (self._coefs()[0] * np.dot(m, x)) * m

    def apply_inv_sqrt(self, x):
        self._check(x)
        if self.alpha2 == 0.0:
            return x
        m = self.grad_ema.value
        return x + (self._coefs()[1] * np.dot(m, x)) * m

    def _dense(self, which):
        m = self.grad_ema.value
        outer = np.outer(m, m)
        eye = np.eye(self.dim)
        if which is Which.G:
            return eye + self.alpha2 * outer
        s = float(np.dot(m, m))
        n = -1 if which is Which.INV else -0.5
        return eye + monge_f(n, s, self.alpha2) * outer


def monge_gamma(grad_ema, hess, alpha2: float, lam: float) -> np.ndarray:
    """Closed-form divergence term Gamma_j = sum_k d/dtheta_k (G^-1)_jk.

    `grad_ema` is the post-update moving average m, `hess` the Hessian of the
    stochastic log-potential; m depends on theta through (1 - lam) * hess.
    """
    m = np.asarray(grad_ema, dtype=np.float64)
    hess = np.asarray(hess, dtype=np.float64)
    if hess.shape != (m.size, m.size):
        raise ValueError(f"hessian shape {hess.shape} does not match gradient length {m.size}")
    if alpha2 == 0.0 or lam == 1.0:
        return np.zeros_like(m)
    denom = 1.0 + alpha2 * float(m @ m)
    hm = hess @ m
    s1 = np.trace(hess)
    s2 = float(m @ hm)
    first = -alpha2 * (hm + s1 * m) / denom
    second = 2.0 * alpha2**2 * s2 * m / denom**2
    return (1.0 - lam) * (first + second)
