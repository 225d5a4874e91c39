from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..tensorcore import ParamRegistry

DENSE_LIMIT = 256


class MetricKind(str, enum.Enum):
    IDENTITY = "identity"
    RMSPROP = "rmsprop"
    WENZEL = "wenzel"
    MONGE = "monge"
    SHAMPOO = "shampoo"

    @classmethod
    def parse(cls, value) -> "MetricKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown metric {value!r}; expected one of {names}") from None


class Which(str, enum.Enum):
    G = "G"
    INV = "inv"
    INV_SQRT = "inv_sqrt"


class DenseTooLarge(ValueError):
    pass


# Defaults: lambda=0.99 and eps=1e-8 for the adaptive metrics, lambda=0.9 for Monge.
_DEFAULTS = {
    MetricKind.IDENTITY: {},
    MetricKind.RMSPROP: {"lam": 0.99, "eps": 1e-8},
    MetricKind.WENZEL: {"lam": 0.99, "eps": 1e-8},
    MetricKind.MONGE: {"lam": 0.9, "alpha2": 0.1},
    MetricKind.SHAMPOO: {"lam": 0.99, "eps": 1e-8, "refresh_interval": 100},
}


@dataclass
class MetricSpec:
    """Metric choice plus hyperparameters. Unset fields take per-kind defaults."""

    kind: MetricKind = MetricKind.IDENTITY
    lam: Optional[float] = None
    eps: Optional[float] = None
    alpha2: Optional[float] = None
    update_period: Optional[int] = None
    refresh_interval: Optional[int] = None
    block_size: Optional[int] = None

    def __post_init__(self):
        self.kind = MetricKind.parse(self.kind)
        for key, value in _DEFAULTS[self.kind].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        self.validate()

    def validate(self):
        if self.lam is not None and not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if self.eps is not None and self.eps < 0.0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        if self.kind is MetricKind.SHAMPOO and not self.eps > 0.0:
            raise ValueError("shampoo requires eps > 0")
        if self.alpha2 is not None and self.alpha2 < 0.0:
            raise ValueError(f"alpha2 must be non-negative, got {self.alpha2}")
        for key in ("update_period", "refresh_interval", "block_size"):
            v = getattr(self, key)
            if v is not None and int(v) < 1:
                raise ValueError(f"{key} must be a positive integer, got {v}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return {k: v for k, v in d.items() if v is not None}


class Metric:
    """Adaptive metric tensor G acting on flat parameter vectors.

    State is owned by one chain and updated in place by `observe` and
    `refresh`; `apply_inv` and `apply_inv_sqrt` return new arrays.
    """

    kind: MetricKind

    def __init__(self, registry: ParamRegistry, spec: MetricSpec):
        self.registry = registry
        self.spec = spec
        self.dim = registry.dim

    def _check(self, x):
        if x.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got shape {x.shape}")

    def observe(self, g_hat: np.ndarray, step: int) -> None:
        pass

    def refresh(self, step: int) -> None:
        pass

    def apply_inv(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_inv_sqrt(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dense(self, which: Which | str, limit: int = DENSE_LIMIT) -> np.ndarray:
        which = Which(which)
        if self.dim > limit:
            raise DenseTooLarge(
                f"dense metric refused for D={self.dim} (limit {limit}); oracle use only"
            )
        return self._dense(which)

    def _dense(self, which: Which) -> np.ndarray:
        raise NotImplementedError
