"""Shampoo metric: per-tensor Kronecker products of factor-matrix roots.

For a tensor of rank d with axis factors H^0..H^{d-1}, the metric block is
kron(H^0, ..., H^{d-1})^(1/(2d)) acting on the C-order flattening; its inverse
and inverse square root are applied one axis at a time.
"""

from __future__ import annotations

import itertools

import numpy as np

from .base import Metric, MetricKind, Which
from .linalg import inverse_root, root, shampoo_contract


class _Block:
    """One independently preconditioned tensor (a whole parameter or a block of one)."""

    __slots__ = ("entry", "index", "dims", "H", "R_half", "R_quarter", "H_snapshot", "flat_idx")

    def __init__(self, entry, index, dims, eps):
        self.entry = entry
        self.index = index  # tuple of slices into the parameter tensor, or None for the whole
        self.dims = dims
        self.H = [eps * np.eye(n) for n in dims]
        self.R_half = None
        self.R_quarter = None
        self.H_snapshot = None
        self.flat_idx = None

    @property
    def rank(self):
        return len(self.dims)


def _apply_along_axes(x: np.ndarray, mats) -> np.ndarray:
    if x.ndim == 1:
        return mats[0] @ x
    if x.ndim == 2:
        return mats[0] @ x @ mats[1].T
    for axis, r in enumerate(mats):
        x = np.moveaxis(np.tensordot(r, x, axes=([1], [axis])), 0, axis)
    return x


def _kron_all(mats) -> np.ndarray:
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


class ShampooMetric(Metric):
    kind = MetricKind.SHAMPOO

    def __init__(self, registry, spec):
        super().__init__(registry, spec)
        self.lam = spec.lam
        self.eps = spec.eps
        self.refresh_interval = int(spec.refresh_interval)
        self.block_size = spec.block_size
        self.blocks: list[_Block] = []
        for entry in registry:
            dims = entry.shape.dims
            if self.block_size is None or all(n <= self.block_size for n in dims):
                self.blocks.append(_Block(entry, None, dims, self.eps))
                continue
            ranges = [
                [slice(a, min(a + self.block_size, n)) for a in range(0, n, self.block_size)]
                for n in dims
            ]
            local = np.arange(entry.size).reshape(dims)
            for index in itertools.product(*ranges):
                sub = local[index]
                blk = _Block(entry, index, sub.shape, self.eps)
                blk.flat_idx = entry.start + sub.ravel()
                self.blocks.append(blk)
        self._blocked = any(b.index is not None for b in self.blocks)
        self.refreshed = False

    def _tensor(self, blk, x):
        t = x[blk.entry.slice].reshape(blk.entry.shape.dims)
        return t if blk.index is None else t[blk.index]

    def observe(self, g_hat, step):
        self._check(g_hat)
        lam = self.lam
        for blk in self.blocks:
            g = self._tensor(blk, g_hat)
            for i, H in enumerate(blk.H):
                H *= lam
                H += (1.0 - lam) * shampoo_contract(g, i)

    def refresh(self, step):
        if step % self.refresh_interval:
            return
        for blk in self.blocks:
            p = 4 * blk.rank
            blk.R_quarter = [inverse_root(H, p, self.eps) for H in blk.H]
            blk.R_half = [r @ r for r in blk.R_quarter]
            blk.H_snapshot = [H.copy() for H in blk.H]
        self.refreshed = True

    def _apply(self, x, attr):
        self._check(x)
        if not self.refreshed:
            raise RuntimeError("shampoo roots have not been computed; call refresh first")
        out = np.empty_like(x)
        for blk in self.blocks:
            y = _apply_along_axes(self._tensor(blk, x), getattr(blk, attr))
            if blk.index is None:
                out[blk.entry.slice] = y.ravel()
            else:
                out[blk.flat_idx] = y.ravel()
        return out

    def apply_inv(self, x):
        return self._apply(x, "R_half")

    def apply_inv_sqrt(self, x):
        return self._apply(x, "R_quarter")

    def _dense(self, which):
        if not self.refreshed:
            raise RuntimeError("shampoo roots have not been computed; call refresh first")
        out = np.zeros((self.dim, self.dim))
        for blk in self.blocks:
            if which is Which.G:
                mats = [root(H, 1.0 / (2 * blk.rank), self.eps) for H in blk.H_snapshot]
            elif which is Which.INV:
                mats = blk.R_half
            else:
                mats = blk.R_quarter
            if blk.index is None:
                idx = np.arange(blk.entry.start, blk.entry.stop)
            else:
                idx = blk.flat_idx
            out[np.ix_(idx, idx)] = _kron_all(mats)
        return out
