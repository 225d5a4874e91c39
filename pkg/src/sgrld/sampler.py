"""Euler-Maruyama SGRLD loop with burn-in, thinning and replicate execution.

One step, with g_hat the stochastic gradient divided by n and
grad = n * g_hat the full-scale estimate::

    metric.observe(g_hat); metric.refresh(t)
    theta <- theta - h * G^-1 grad + sqrt(2 tau h) * G^-1/2 R,   R ~ N(0, I)

The divergence correction term is not added.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .metrics import InverseRootError, Metric, MetricKind, MetricSpec, make_metric
from .targets import Target
from .tensorcore import RngStream


class ChainAbort(RuntimeError):
    def __init__(self, step: int, grad_norm: float, chain=None, message=None):
        super().__init__(message or f"non-finite state at step {step} (|grad U| = {grad_norm:.6g})")
        self.step = step
        self.grad_norm = grad_norm
        self.chain = chain


def step_size_from_lr(lr: float, n: int) -> float:
    """Learning rate l and step size h are related by l = h * n."""
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if n < 1:
        raise ValueError("training-set size must be >= 1")
    return lr / n


def steps_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


@dataclass
class StepRecord:
    step: int
    u: float
    grad_norm: float
    safeguard: bool


def sgrld_step(
    theta: np.ndarray,
    metric: Metric,
    target: Target,
    h: float,
    tau: float,
    rng: RngStream,
    step: int = 0,
    batch=None,
    data_rng: Optional[RngStream] = None,
    safeguard_threshold: Optional[float] = None,
    safeguard_scale: float | str = "clip",
):
    """Advance `theta` by one step; `metric` is updated in place.

    Returns (new theta, StepRecord). The safeguard only applies to Monge: when
    |G^-1 grad| exceeds the threshold, drift and noise use c * I for that step
    instead of the metric. ``safeguard_scale="clip"`` picks
    c = threshold / |grad| so the drift norm equals the threshold; a number
    fixes c.
    """
    u, g_hat = target.stoch_value_and_grad(theta, batch, data_rng if data_rng is not None else rng)
    metric.observe(g_hat, step)
    metric.refresh(step)
    grad = g_hat * target.train_size if target.train_size != 1 else g_hat
    drift = metric.apply_inv(grad)
    noise = rng.normal(theta.shape[0])
    triggered = False
    if (
        safeguard_threshold is not None
        and metric.kind is MetricKind.MONGE
        and math.sqrt(np.dot(drift, drift)) > safeguard_threshold
    ):
        triggered = True
        if safeguard_scale == "clip":
            c = safeguard_threshold / math.sqrt(np.dot(grad, grad))
        else:
            c = safeguard_scale
        drift = c * grad
        noise = math.sqrt(c) * noise
    else:
        noise = metric.apply_inv_sqrt(noise)
    new = theta - h * drift + math.sqrt(2.0 * tau * h) * noise
    return new, StepRecord(step, u, math.sqrt(np.dot(grad, grad)), triggered)


@dataclass
class ChainConfig:
    """Everything that determines a chain, given a built target."""

    metric: MetricSpec = field(default_factory=MetricSpec)
    learning_rate: float = 1e-3
    temperature: float = 1.0
    total_steps: int = 1100
    burn_in_steps: int = 1000
    thinning: int = 100
    batch_size: int = 100
    seed: int = 0
    safeguard_threshold: Optional[float] = 1000.0
    safeguard_scale: float | str = "clip"
    init: Optional[list] = None

    def __post_init__(self):
        if isinstance(self.metric, dict):
            self.metric = MetricSpec(**self.metric)
        elif not isinstance(self.metric, MetricSpec):
            self.metric = MetricSpec(kind=self.metric)
        self.validate()

    def validate(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if not 0 <= self.burn_in_steps < self.total_steps:
            raise ValueError("need 0 <= burn_in_steps < total_steps")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.safeguard_threshold is not None and not self.safeguard_threshold > 0:
            raise ValueError("safeguard_threshold must be positive")
        if self.safeguard_scale != "clip" and not (
            isinstance(self.safeguard_scale, (int, float)) and self.safeguard_scale > 0
        ):
            raise ValueError('safeguard_scale must be "clip" or a positive number')

    @property
    def n_samples(self) -> int:
        return (self.total_steps - self.burn_in_steps) // self.thinning


@dataclass
class Chain:
    samples: np.ndarray
    sample_steps: np.ndarray
    steps: np.ndarray
    u: np.ndarray
    grad_norm: np.ndarray
    safeguard: np.ndarray
    step_size: float
    integration_time: float
    wall_time: float
    seed: int
    aborted: Optional[str] = None

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def safeguard_count(self) -> int:
        return int(np.sum(self.safeguard))


class _Batches:
    """Epoch-wise shuffled minibatches without replacement."""

    def __init__(self, n: int, batch_size: int, rng: RngStream):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self.perm = None
        self.pos = n

    def next(self):
        if self.pos >= self.n:
            self.perm = self.rng.generator.permutation(self.n)
            self.pos = 0
        idx = self.perm[self.pos : self.pos + self.batch_size]
        self.pos += self.batch_size
        return idx


def _resolve_metric_spec(spec: MetricSpec, target: Target, batch_size: int) -> MetricSpec:
    if spec.kind is MetricKind.WENZEL and spec.update_period is None:
        # Refresh once per epoch for data targets, every 100 steps otherwise.
        n = target.train_size
        period = steps_per_epoch(n, batch_size) if n > 1 else 100
        spec = MetricSpec(**{**spec.to_dict(), "update_period": period})
    return spec


def run_chain(config: ChainConfig, target: Target) -> Chain:
    """Run one chain; deterministic given (config, target)."""
    t0 = time.perf_counter()
    h = step_size_from_lr(config.learning_rate, target.train_size)
    root = RngStream(config.seed)
    noise_rng, data_rng, init_rng = root.spawn(3)
    metric = make_metric(_resolve_metric_spec(config.metric, target, config.batch_size), target.registry)
    if config.init is not None:
        theta = np.array(config.init, dtype=np.float64)
        if theta.shape != (target.dim,):
            raise ValueError(f"init must have length {target.dim}")
    else:
        theta = target.initial_position(init_rng)
    batches = _Batches(target.train_size, config.batch_size, data_rng) if target.train_size > 1 else None

    T = config.total_steps
    n_keep = config.n_samples
    samples = np.empty((n_keep, target.dim))
    sample_steps = np.empty(n_keep, dtype=np.int64)
    u_log = np.empty(T)
    g_log = np.empty(T)
    sg_log = np.zeros(T, dtype=bool)
    kept = 0
    aborted = None
    tau = config.temperature
    threshold = config.safeguard_threshold
    done = 0
    for t in range(T):
        batch = batches.next() if batches is not None else None
        try:
            theta_new, rec = sgrld_step(
                theta, metric, target, h, tau, noise_rng, t, batch, data_rng,
                threshold, config.safeguard_scale,
            )
        except InverseRootError as exc:
            # factor statistics overflowed before theta did
            done = t
            aborted = f"metric refresh failed at step {t + 1}: {exc}"
            break
        u_log[t] = rec.u
        g_log[t] = rec.grad_norm
        sg_log[t] = rec.safeguard
        done = t + 1
        if not np.all(np.isfinite(theta_new)):
            aborted = f"non-finite state at step {t + 1} (|grad U| = {rec.grad_norm:.6g})"
            break
        theta = theta_new
        s = t + 1 - config.burn_in_steps
        if s > 0 and s % config.thinning == 0:
            samples[kept] = theta
            sample_steps[kept] = t + 1
            kept += 1
    chain = Chain(
        samples=samples[:kept],
        sample_steps=sample_steps[:kept],
        steps=np.arange(1, done + 1),
        u=u_log[:done],
        grad_norm=g_log[:done],
        safeguard=sg_log[:done],
        step_size=h,
        integration_time=h * done,
        wall_time=time.perf_counter() - t0,
        seed=config.seed,
        aborted=aborted,
    )
    if aborted is not None:
        raise ChainAbort(done, float(g_log[done - 1]) if done else math.nan, chain, aborted)
    return chain


def default_workers() -> int:
    env = os.environ.get("SGRLD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"SGRLD_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _replicate(args):
    config, target, index = args
    cfg = ChainConfig(**{**config.__dict__, "seed": config.seed + index})
    try:
        return run_chain(cfg, target)
    except ChainAbort as exc:
        return exc.chain


def run_replicates(
    config: ChainConfig, target: Target, n_chains: int, workers: Optional[int] = None
) -> list[Chain]:
    """Chains with seeds seed+0 .. seed+n_chains-1, ordered by replicate index.

    Aborted replicates are returned with `aborted` set instead of raising.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    workers = min(n_chains, workers or default_workers())
    jobs = [(config, target, i) for i in range(n_chains)]
    if workers <= 1:
        return [_replicate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replicate, jobs))
