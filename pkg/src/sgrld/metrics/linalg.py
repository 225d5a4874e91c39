from __future__ import annotations

import numpy as np

SYMMETRY_TOL = 1e-10


class InverseRootError(np.linalg.LinAlgError):
    """Eigendecomposition failed; `.matrix` holds the offending factor."""

    def __init__(self, msg, matrix=None):
        super().__init__(msg)
        self.matrix = matrix


def shampoo_contract(g: np.ndarray, axis: int) -> np.ndarray:
    """Gram matrix of the mode-`axis` fibers of `g`.

    Entry (j, j') sums g[..., j, ...] * g[..., j', ...] over every other index.
    """
    g = np.asarray(g, dtype=np.float64)
    if not 0 <= axis < g.ndim:
        raise ValueError(f"axis {axis} out of range for tensor of rank {g.ndim}")
    if g.ndim == 1:
        return np.outer(g, g)
    unfolded = np.moveaxis(g, axis, 0).reshape(g.shape[axis], -1)
    return unfolded @ unfolded.T


def inverse_root(m: np.ndarray, p: int, eps: float) -> np.ndarray:
    """M^(-1/p) by symmetric eigendecomposition, eigenvalues floored at eps."""
    m = np.asarray(m, dtype=np.float64)
    if p < 1:
        raise ValueError(f"root order must be >= 1, got {p}")
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > SYMMETRY_TOL * max(1.0, np.max(np.abs(m))):
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    try:
        w, q = np.linalg.eigh(0.5 * (m + m.T))
    except np.linalg.LinAlgError as exc:
        raise InverseRootError(f"eigendecomposition failed: {exc}", m) from exc
    if not np.all(np.isfinite(w)):
        raise InverseRootError("non-finite eigenvalues", m)
    w = np.maximum(w, eps)
    r = (q * w ** (-1.0 / p)) @ q.T
    return 0.5 * (r + r.T)


def root(m: np.ndarray, power: float, eps: float) -> np.ndarray:
    """M^power for symmetric M, eigenvalues floored at eps."""
    w, q = np.linalg.eigh(0.5 * (m + m.T))
    w = np.maximum(w, eps)
    r = (q * w**power) @ q.T
    return 0.5 * (r + r.T)
