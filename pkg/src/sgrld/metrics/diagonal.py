"""Diagonal metrics: identity, RMSprop (pSGLD) and Wenzel's layer-wise scaling."""

from __future__ import annotations

import numpy as np

from ..tensorcore import EmaState
from .base import Metric, MetricKind, Which


class IdentityMetric(Metric):
    kind = MetricKind.IDENTITY

    def apply_inv(self, x):
        self._check(x)
        return x

    def apply_inv_sqrt(self, x):
        self._check(x)
        return x

    def _dense(self, which):
        return np.eye(self.dim)


class RmsPropMetric(Metric):
    """G = diag(sqrt(V) + eps) with V an EMA of squared gradients, zero-initialised."""

    kind = MetricKind.RMSPROP

    def __init__(self, registry, spec):
        super().__init__(registry, spec)
        self.V = EmaState.zeros(self.dim, spec.lam)
        self.eps = spec.eps
        self._inv = None
        self._inv_sqrt = None

    def observe(self, g_hat, step):
        self._check(g_hat)
        self.V.update(g_hat * g_hat)
        self._inv = None

    def _scales(self):
        if self._inv is None:
            v = np.sqrt(self.V.value) + self.eps
            with np.errstate(divide="ignore"):
                self._inv = 1.0 / v
                self._inv_sqrt = 1.0 / np.sqrt(v)
        return self._inv, self._inv_sqrt

    def apply_inv(self, x):
        self._check(x)
        return self._scales()[0] * x

    def apply_inv_sqrt(self, x):
        self._check(x)
        return self._scales()[1] * x

    def _dense(self, which):
        v = np.sqrt(self.V.value) + self.eps
        if which is Which.G:
            return np.diag(v)
        if which is Which.INV:
            return np.diag(1.0 / v)
        return np.diag(1.0 / np.sqrt(v))


class WenzelMetric(Metric):
    """Per-layer scalar metric; scales are recomputed every `update_period` steps.

    Each registry entry is one layer. V starts at ones, so before the first
    refresh every layer has relative scale 1.
    """

    kind = MetricKind.WENZEL

    def __init__(self, registry, spec):
        super().__init__(registry, spec)
        self.V = EmaState.ones(self.dim, spec.lam)
        self.eps = spec.eps
        self.update_period = int(spec.update_period or 1)
        n_layers = len(registry)
        self.sigma = np.ones(n_layers)
        self.sigma_tilde = np.ones(n_layers)
        self._sizes = np.array([e.size for e in registry])
        self._starts = np.array([e.start for e in registry])
        self._expand()

    def _expand(self):
        scale = np.repeat(self.sigma_tilde, self._sizes)
        self._inv = 1.0 / scale
        self._inv_sqrt = 1.0 / np.sqrt(scale)

    def observe(self, g_hat, step):
        self._check(g_hat)
        self.V.update(g_hat * g_hat)

    def refresh(self, step):
        if step % self.update_period:
            return
        means = np.add.reduceat(self.V.value, self._starts) / self._sizes
        self.sigma = np.sqrt(self.eps + means)
        # exact division by the minimum leaves that layer at exactly 1.0
        self.sigma_tilde = self.sigma / np.min(self.sigma)
        self._expand()

    def apply_inv(self, x):
        self._check(x)
        return self._inv * x

    def apply_inv_sqrt(self, x):
        self._check(x)
        return self._inv_sqrt * x

    def _dense(self, which):
        scale = np.repeat(self.sigma_tilde, self._sizes)
        if which is Which.G:
            return np.diag(scale)
        if which is Which.INV:
            return np.diag(1.0 / scale)
        return np.diag(1.0 / np.sqrt(scale))
