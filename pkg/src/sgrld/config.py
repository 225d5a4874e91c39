"""JSON experiment configuration with a closed schema.

Top-level keys: ``experiment``, ``target``, ``metric``, ``sampler``, ``output``.
Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .metrics import MetricSpec
from .sampler import ChainConfig, steps_per_epoch
from .targets import Dataset, FunnelTarget, GaussianTarget, MlpTarget, PriorSpec, load_csv, two_cluster

EXPERIMENT_KINDS = ("funnel", "bnn", "gaussian-check", "verify")
TARGET_FOR_EXPERIMENT = {"funnel": "funnel", "bnn": "mlp", "gaussian-check": "gaussian"}


class ConfigError(ValueError):
    pass


def _take(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _prune(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


@dataclass
class ExperimentSection:
    kind: str = "funnel"
    replicates: int = 1

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"experiment kind must be one of {', '.join(EXPERIMENT_KINDS)}")
        if int(self.replicates) < 1:
            raise ValueError("replicates must be >= 1")


@dataclass
class DataSection:
    kind: str = "two_cluster"
    n: Optional[int] = None
    separation: Optional[float] = None
    seed: Optional[int] = None
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind == "two_cluster":
            self.n = 1000 if self.n is None else int(self.n)
            self.separation = 3.0 if self.separation is None else float(self.separation)
            self.seed = 0 if self.seed is None else int(self.seed)
            if self.n < 2:
                raise ValueError("data.n must be >= 2")
        elif self.kind == "csv":
            if not self.path:
                raise ValueError("csv data needs a path")
        else:
            raise ValueError(f"unknown data kind {self.kind!r}")

    def build(self) -> Dataset:
        if self.kind == "two_cluster":
            return two_cluster(self.n, self.separation, self.seed)
        return load_csv(self.path)

    def size(self) -> int:
        if self.kind == "two_cluster":
            return self.n
        return len(self.build())


@dataclass
class TargetSection:
    kind: str = "funnel"
    # funnel
    dim: Optional[int] = None
    mu: Optional[list] = None
    sigma2: Optional[float] = None
    noise_std: Optional[float] = None
    # gaussian
    mean: Optional[list] = None
    var: Optional[object] = None
    # mlp
    sizes: Optional[list] = None
    activation: Optional[str] = None
    prior: Optional[dict] = None
    data: Optional[dict] = None
    test_data: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in ("funnel", "gaussian", "mlp"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        own = {
            "funnel": {"dim", "mu", "sigma2", "noise_std"},
            "gaussian": {"dim", "mean", "var"},
            "mlp": {"sizes", "activation", "prior", "data", "test_data"},
        }[self.kind]
        for f in fields(self):
            if f.name != "kind" and f.name not in own and getattr(self, f.name) is not None:
                raise ValueError(f"key {f.name!r} does not apply to a {self.kind} target")
        if self.kind == "mlp":
            if not self.sizes:
                raise ValueError("mlp target needs sizes")
            if self.prior is not None:
                _take(PriorSpec, self.prior, "target.prior")
            for key in ("data", "test_data"):
                if getattr(self, key) is not None:
                    _take(DataSection, getattr(self, key), f"target.{key}")
        # constructing validates the remaining fields
        if self.kind != "mlp":
            self.build()

    def _data(self) -> DataSection:
        return _take(DataSection, self.data or {}, "target.data")

    def train_size(self) -> int:
        return self._data().size() if self.kind == "mlp" else 1

    def build(self):
        if self.kind == "funnel":
            return FunnelTarget(
                dim=self.dim or 2,
                mu=self.mu,
                sigma2=9.0 if self.sigma2 is None else self.sigma2,
                noise_std=0.0 if self.noise_std is None else self.noise_std,
            )
        if self.kind == "gaussian":
            if self.mean is not None:
                mean = self.mean
            else:
                mean = [0.0] * (self.dim or 1)
            return GaussianTarget(mean, 1.0 if self.var is None else self.var)
        prior = PriorSpec(**(self.prior or {}))
        return MlpTarget(self.sizes, self._data().build(), prior, self.activation or "relu")

    def build_test_data(self) -> Optional[Dataset]:
        if self.kind != "mlp":
            return None
        if self.test_data is not None:
            return _take(DataSection, self.test_data, "target.test_data").build()
        train = self._data()
        if train.kind == "two_cluster":
            return two_cluster(train.n, train.separation, train.seed + 1)
        return None


@dataclass
class SamplerSection:
    learning_rate: float = 1e-3
    temperature: float = 1.0
    total_steps: Optional[int] = None
    total_epochs: Optional[float] = None
    burn_in_steps: int = 1000
    thinning: int = 100
    batch_size: int = 100
    seed: int = 0
    safeguard_threshold: Optional[float] = 1000.0
    safeguard_scale: object = "clip"
    init: Optional[list] = None

    def __post_init__(self):
        if (self.total_steps is None) == (self.total_epochs is None):
            raise ValueError("give exactly one of total_steps or total_epochs")


@dataclass
class OutputSection:
    dir: Optional[str] = None
    store_coordinates: Optional[list] = None
    scatter_subsample: Optional[int] = None
    plots: bool = True


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    target: TargetSection = field(default_factory=TargetSection)
    metric: MetricSpec = field(default_factory=MetricSpec)
    sampler: SamplerSection = field(default_factory=lambda: SamplerSection(total_steps=1100))
    output: OutputSection = field(default_factory=OutputSection)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        top = {"experiment", "target", "metric", "sampler", "output"}
        unknown = sorted(set(data) - top)
        if unknown:
            raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
        missing = sorted({"experiment", "target", "metric", "sampler"} - set(data))
        exp = _take(ExperimentSection, data.get("experiment", {}), "experiment")
        if exp.kind == "verify":
            missing = []
        if missing:
            raise ConfigError(f"missing section(s) {', '.join(missing)}")
        cfg = cls(
            experiment=exp,
            target=_take(TargetSection, data.get("target", {"kind": "funnel"}), "target"),
            metric=_take(MetricSpec, data.get("metric", {}), "metric"),
            sampler=_take(SamplerSection, data.get("sampler", {"total_steps": 1100}), "sampler"),
            output=_take(OutputSection, data.get("output", {}), "output"),
        )
        want = TARGET_FOR_EXPERIMENT.get(exp.kind)
        if want is not None and cfg.target.kind != want:
            raise ConfigError(f"experiment {exp.kind!r} needs a {want!r} target, got {cfg.target.kind!r}")
        s = cfg.sampler
        if s.total_epochs is not None:
            # canonical unit is steps
            n = cfg.target.train_size()
            s.total_steps = int(round(s.total_epochs * steps_per_epoch(n, s.batch_size)))
            s.total_epochs = None
        try:
            cfg.chain_config()
        except ValueError as exc:
            raise ConfigError(f"sampler: {exc}") from None
        return cfg

    def to_dict(self) -> dict:
        return {
            "experiment": asdict(self.experiment),
            "target": _prune(asdict(self.target)),
            "metric": self.metric.to_dict(),
            "sampler": self._sampler_dict(),
            "output": _prune(asdict(self.output)),
        }

    def _sampler_dict(self) -> dict:
        # a null safeguard threshold means "off", so it must survive the round trip
        d = _prune(asdict(self.sampler))
        d["safeguard_threshold"] = self.sampler.safeguard_threshold
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def chain_config(self, seed: Optional[int] = None) -> ChainConfig:
        s = self.sampler
        return ChainConfig(
            metric=self.metric,
            learning_rate=s.learning_rate,
            temperature=s.temperature,
            total_steps=s.total_steps,
            burn_in_steps=s.burn_in_steps,
            thinning=s.thinning,
            batch_size=s.batch_size,
            seed=s.seed if seed is None else seed,
            safeguard_threshold=s.safeguard_threshold,
            safeguard_scale=s.safeguard_scale,
            init=s.init,
        )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(data)
