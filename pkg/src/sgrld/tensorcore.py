"""Flat/shaped parameter storage, exponential moving averages and seeded RNG."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TensorShape",
    "ParamEntry",
    "ParamRegistry",
    "ParamStore",
    "EmaState",
    "ema_update",
    "RngStream",
    "gaussian_draws",
    "pack",
    "unpack",
]


@dataclass(frozen=True)
class TensorShape:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) < 1:
            raise ValueError("tensor rank must be at least 1")
        if any(n < 1 for n in dims):
            raise ValueError(f"all dimensions must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))


@dataclass(frozen=True)
class ParamEntry:
    name: str
    shape: TensorShape
    start: int
    stop: int

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)

    @property
    def size(self) -> int:
        return self.stop - self.start


class ParamRegistry:
    """Ordered mapping from named tensors to contiguous coordinate ranges.

    Order is declaration order; `pack` concatenates C-order flattenings in
    that order and `unpack` returns reshaped views into a flat vector.
    """

    def __init__(self, shapes: Iterable[tuple[str, Sequence[int]]] = ()):
        entries = []
        names = set()
        offset = 0
        for name, dims in shapes:
            if name in names:
                raise ValueError(f"duplicate parameter name {name!r}")
            names.add(name)
            shape = TensorShape(tuple(dims))
            entries.append(ParamEntry(name, shape, offset, offset + shape.size))
            offset += shape.size
        self.entries: tuple[ParamEntry, ...] = tuple(entries)
        self.dim = offset

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, name: str) -> ParamEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def __eq__(self, other):
        if not isinstance(other, ParamRegistry):
            return NotImplemented
        return [(e.name, e.shape.dims) for e in self] == [(e.name, e.shape.dims) for e in other]

    def __repr__(self):
        body = ", ".join(f"{e.name}={e.shape.dims}" for e in self)
        return f"ParamRegistry({body})"

    def pack(self, tensors: Sequence[np.ndarray]) -> np.ndarray:
        if len(tensors) != len(self.entries):
            raise ValueError(f"expected {len(self.entries)} tensors, got {len(tensors)}")
        parts = []
        for entry, t in zip(self.entries, tensors):
            t = np.asarray(t, dtype=np.float64)
            if t.shape != entry.shape.dims:
                raise ValueError(
                    f"shape mismatch for layer {entry.name!r}: "
                    f"expected {entry.shape.dims}, got {t.shape}"
                )
            parts.append(t.ravel())
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)

    def unpack(self, flat: np.ndarray) -> list[np.ndarray]:
        flat = np.asarray(flat)
        if flat.shape != (self.dim,):
            raise ValueError(f"expected flat vector of length {self.dim}, got shape {flat.shape}")
        return [flat[e.slice].reshape(e.shape.dims) for e in self.entries]


def pack(registry: ParamRegistry, tensors: Sequence[np.ndarray]) -> np.ndarray:
    return registry.pack(tensors)


def unpack(registry: ParamRegistry, flat: np.ndarray) -> list[np.ndarray]:
    return registry.unpack(flat)


@dataclass
class ParamStore:
    registry: ParamRegistry
    values: np.ndarray = None

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros(self.registry.dim)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.registry.dim,):
            raise ValueError("values length does not match registry")

    def views(self) -> list[np.ndarray]:
        return self.registry.unpack(self.values)

    def __getitem__(self, name: str) -> np.ndarray:
        e = self.registry[name]
        return self.values[e.slice].reshape(e.shape.dims)


@dataclass
class EmaState:
    """value <- lam * value + (1 - lam) * observation."""

    value: np.ndarray
    lam: float
    initialized_to: str = "zeros"

    @classmethod
    def zeros(cls, shape, lam: float) -> "EmaState":
        return cls(np.zeros(shape), lam, "zeros")

    @classmethod
    def ones(cls, shape, lam: float) -> "EmaState":
        return cls(np.ones(shape), lam, "ones")

    @classmethod
    def scaled_identity(cls, n: int, eps: float, lam: float) -> "EmaState":
        return cls(eps * np.eye(n), lam, "scaled-identity")

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"EMA decay must lie in [0, 1], got {self.lam}")
        self.value = np.array(self.value, dtype=np.float64)

    def update(self, observation) -> "EmaState":
        """In-place update; returns self."""
        observation = np.asarray(observation)
        if observation.shape != self.value.shape:
            raise ValueError(
                f"observation shape {observation.shape} != state shape {self.value.shape}"
            )
        if self.lam == 1.0:
            return self
        if self.lam == 0.0:
            self.value[...] = observation
            return self
        self.value *= self.lam
        self.value += (1.0 - self.lam) * observation
        return self


def ema_update(state: EmaState, observation) -> EmaState:
    """Functional EMA step; `state` is left untouched."""
    new = EmaState(state.value.copy(), state.lam, state.initialized_to)
    return new.update(observation)


@dataclass
class RngStream:
    """Seeded PCG64 stream. Equal seeds give bit-identical draws."""

    seed: int
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    @classmethod
    def from_generator(cls, seed: int, gen: np.random.Generator) -> "RngStream":
        obj = cls.__new__(cls)
        obj.seed = seed
        obj._gen = gen
        return obj

    def spawn(self, n: int) -> list["RngStream"]:
        """Independent child streams, determined by the parent seed."""
        children = np.random.SeedSequence(self.seed).spawn(n)
        return [
            RngStream.from_generator(self.seed, np.random.Generator(np.random.PCG64(c)))
            for c in children
        ]

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, n: int) -> np.ndarray:
        return self._gen.standard_normal(n)


def gaussian_draws(rng: RngStream, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be non-negative")
    return rng.normal(n)
