"""Log-potentials U(theta) = -log p(X, theta) with exact and stochastic gradients.

Stochastic gradients follow the per-datum convention: ``stoch_grad`` returns
an unbiased estimate of grad U divided by the training-set size ``n``. Targets
without data use ``n = 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_softmax, logsumexp

from .tensorcore import ParamRegistry, RngStream

LOG_2PI = math.log(2.0 * math.pi)


def softplus(x):
    """log(1 + e^x) without overflow."""
    return np.logaddexp(0.0, x)


class Target:
    registry: ParamRegistry
    train_size: int = 1

    @property
    def dim(self) -> int:
        return self.registry.dim

    def log_potential(self, theta) -> float:
        raise NotImplementedError

    def full_grad(self, theta) -> np.ndarray:
        raise NotImplementedError

    def stoch_value_and_grad(self, theta, batch=None, rng: Optional[RngStream] = None):
        """(U estimate, g_hat) with g_hat the gradient estimate divided by n."""
        return self.log_potential(theta), self.full_grad(theta) / self.train_size

    def stoch_grad(self, theta, batch=None, rng: Optional[RngStream] = None) -> np.ndarray:
        return self.stoch_value_and_grad(theta, batch, rng)[1]

    def initial_position(self, rng: RngStream) -> np.ndarray:
        return np.zeros(self.dim)


class FunnelTarget(Target):
    """N(theta_1..D-1 | mu, sp(theta_D) I) * N(theta_D | 0, sigma2); theta_D is last."""

    def __init__(self, dim: int = 2, mu=None, sigma2: float = 9.0, noise_std: float = 0.0):
        if dim < 2:
            raise ValueError("funnel needs dim >= 2")
        if sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        self.mu = np.zeros(dim - 1) if mu is None else np.asarray(mu, dtype=np.float64)
        if self.mu.shape != (dim - 1,):
            raise ValueError(f"mu must have length {dim - 1}")
        self.sigma2 = float(sigma2)
        self.noise_std = float(noise_std)
        self.registry = ParamRegistry([("theta", (dim,))])
        self.train_size = 1

    def log_potential(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        k = self.dim - 1
        x = theta[-1]
        s = softplus(x)
        r = theta[:-1] - self.mu
        return float(
            0.5 * k * (LOG_2PI + math.log(s))
            + np.dot(r, r) / (2.0 * s)
            + 0.5 * (LOG_2PI + math.log(self.sigma2))
            + x * x / (2.0 * self.sigma2)
        )

    def full_grad(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        k = self.dim - 1
        x = theta[-1]
        s = float(softplus(x))
        ds = float(expit(x))
        r = theta[:-1] - self.mu
        grad = np.empty(self.dim)
        grad[:-1] = r / s
        # (ds / s) stays near 1 deep in the neck, where s * s would underflow
        grad[-1] = (ds / s) * (0.5 * k - np.dot(r, r) / (2.0 * s)) + x / self.sigma2
        return grad

    def stoch_value_and_grad(self, theta, batch=None, rng=None):
        grad = self.full_grad(theta)
        if self.noise_std > 0.0:
            if rng is None:
                raise ValueError("noisy funnel gradients need an rng")
            grad += self.noise_std * rng.normal(self.dim)
        return self.log_potential(theta), grad

    def marginal_cdf(self, x):
        from scipy.stats import norm

        return norm.cdf(x, scale=math.sqrt(self.sigma2))

    def marginal_pdf(self, x):
        from scipy.stats import norm

        return norm.pdf(x, scale=math.sqrt(self.sigma2))


class GaussianTarget(Target):
    """Independent normal with per-coordinate mean and variance."""

    def __init__(self, mean, var):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.var = np.broadcast_to(np.asarray(var, dtype=np.float64), self.mean.shape).copy()
        if np.any(self.var <= 0):
            raise ValueError("variances must be positive")
        self.registry = ParamRegistry([("theta", self.mean.shape)])
        self.train_size = 1
        self._const = 0.5 * float(np.sum(LOG_2PI + np.log(self.var)))

    def log_potential(self, theta) -> float:
        r = np.asarray(theta) - self.mean
        return float(np.sum(r * r / (2.0 * self.var)) + self._const)

    def full_grad(self, theta):
        return (np.asarray(theta) - self.mean) / self.var

    def initial_position(self, rng):
        return self.mean + np.sqrt(self.var) * rng.normal(self.dim)


def gaussian_target(mean, var) -> GaussianTarget:
    return GaussianTarget(mean, var)


# ---------------------------------------------------------------- priors


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian N(0, sigma2) or horseshoe N(0, sigma2 * lambda_l^2) per layer.

    For the horseshoe, lambda_l = exp(rho_l) with rho_l sampled alongside the
    weights; its density is half-Cauchy(0, 1) times the Jacobian lambda_l.
    """

    kind: str = "gaussian"
    sigma2: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "horseshoe"):
            raise ValueError(f"unknown prior {self.kind!r}")
        if self.sigma2 <= 0:
            raise ValueError("prior sigma2 must be positive")


def prior_log_density(prior: PriorSpec, layers: Sequence[np.ndarray], rho=None) -> float:
    """Exact log density of the (weights, rho) prior; `layers` groups parameters sharing a scale."""
    if prior.kind == "gaussian":
        total = 0.0
        for w in layers:
            w = np.asarray(w).ravel()
            total += -0.5 * w.size * (LOG_2PI + math.log(prior.sigma2)) - np.dot(w, w) / (
                2.0 * prior.sigma2
            )
        return float(total)
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (len(layers),):
        raise ValueError("horseshoe prior needs one log-scale per layer")
    total = 0.0
    for w, r in zip(layers, rho):
        w = np.asarray(w).ravel()
        var = prior.sigma2 * math.exp(2.0 * r)
        total += -0.5 * w.size * (LOG_2PI + math.log(var)) - np.dot(w, w) / (2.0 * var)
        # half-Cauchy(0, 1) on lambda plus log|d lambda / d rho| = rho
        total += math.log(2.0 / math.pi) - np.logaddexp(0.0, 2.0 * r) + r
    return float(total)


def prior_log_density_grad(prior: PriorSpec, layers, rho=None):
    """Gradients of `prior_log_density` w.r.t. each layer and rho."""
    if prior.kind == "gaussian":
        return [-np.asarray(w) / prior.sigma2 for w in layers], None
    rho = np.asarray(rho, dtype=np.float64)
    grads = []
    grho = np.empty_like(rho)
    for i, (w, r) in enumerate(zip(layers, rho)):
        w = np.asarray(w)
        var = prior.sigma2 * math.exp(2.0 * r)
        grads.append(-w / var)
        lam2 = math.exp(2.0 * r)
        grho[i] = -w.size + np.sum(w * w) / var - 2.0 * lam2 / (1.0 + lam2) + 1.0
    return grads, grho


# ---------------------------------------------------------------- data


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int = field(default=0)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError("X must be (n, features) and y must be (n,)")
        if not self.n_classes:
            self.n_classes = int(self.y.max()) + 1 if self.y.size else 0
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("label out of range")

    def __len__(self):
        return self.X.shape[0]


def two_cluster(n: int = 1000, separation: float = 3.0, seed: int = 0, dim: int = 2) -> Dataset:
    """Balanced two-class Gaussian clusters with unit variance, means `separation` apart."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    rng.shuffle(y)
    direction = np.ones(dim) / math.sqrt(dim)
    centres = np.stack([-0.5 * separation * direction, 0.5 * separation * direction])
    X = centres[y] + rng.standard_normal((n, dim))
    return Dataset(X, y, 2)


def load_csv(path) -> Dataset:
    """Rows of `features..., label` with a mandatory header line."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    try:
        header_floats = [float(h) for h in header]
    except ValueError:
        header_floats = None
    if header_floats is not None:
        raise ValueError(f"{path}: header line required")
    data = np.array([[float(v) for v in row[:-1]] for row in rows])
    labels = np.array([int(row[-1]) for row in rows])
    return Dataset(data, labels)


# ---------------------------------------------------------------- MLP


_ACTIVATIONS = ("relu", "tanh")


class MlpTarget(Target):
    """Fully connected classifier with softmax likelihood.

    Registry order: W1, b1, W2, b2, ..., then ``log_scales`` (one per layer)
    when the prior is a horseshoe. Weights are stored (fan_in, fan_out).
    """

    def __init__(
        self,
        sizes: Sequence[int],
        data: Dataset,
        prior: PriorSpec = PriorSpec(),
        activation: str = "relu",
    ):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        self.sizes = tuple(int(s) for s in sizes)
        if data.X.shape[1] != self.sizes[0]:
            raise ValueError("input size does not match data features")
        if data.n_classes > self.sizes[-1]:
            raise ValueError("more classes than output units")
        self.data = data
        self.prior = prior
        self.activation = activation
        self.n_layers = len(self.sizes) - 1
        shapes = []
        for k in range(self.n_layers):
            shapes.append((f"W{k + 1}", (self.sizes[k], self.sizes[k + 1])))
            shapes.append((f"b{k + 1}", (self.sizes[k + 1],)))
        if prior.kind == "horseshoe":
            shapes.append(("log_scales", (self.n_layers,)))
        self.registry = ParamRegistry(shapes)
        self.train_size = len(data)

    def _split(self, theta):
        views = self.registry.unpack(np.asarray(theta, dtype=np.float64))
        Ws = views[0 : 2 * self.n_layers : 2]
        bs = views[1 : 2 * self.n_layers : 2]
        rho = views[-1] if self.prior.kind == "horseshoe" else None
        return Ws, bs, rho

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def _act_grad(self, z, a):
        return (z > 0.0).astype(np.float64) if self.activation == "relu" else 1.0 - a * a

    def logits(self, theta, X) -> np.ndarray:
        Ws, bs, _ = self._split(theta)
        a = X
        for k in range(self.n_layers):
            z = a @ Ws[k] + bs[k]
            a = self._act(z) if k < self.n_layers - 1 else z
        return a

    def predict_proba(self, theta, X) -> np.ndarray:
        return np.exp(log_softmax(self.logits(theta, X), axis=1))

    def _check_labels(self, y):
        if y.size and (y.min() < 0 or y.max() >= self.sizes[-1]):
            raise ValueError("label out of range")

    def nll(self, theta, batch=None) -> float:
        X, y = self._batch(batch)
        self._check_labels(y)
        logits = self.logits(theta, X)
        return float(np.sum(logsumexp(logits, axis=1) - logits[np.arange(len(y)), y]))

    def _batch(self, batch):
        if batch is None:
            return self.data.X, self.data.y
        batch = np.asarray(batch)
        return self.data.X[batch], self.data.y[batch]

    def _layers_for_prior(self, Ws, bs):
        return [np.concatenate([W.ravel(), b]) for W, b in zip(Ws, bs)]

    def log_prior(self, theta) -> float:
        Ws, bs, rho = self._split(theta)
        return prior_log_density(self.prior, self._layers_for_prior(Ws, bs), rho)

    def _value_and_grad(self, theta, batch):
        """U restricted to `batch` and scaled to the full data, and its full-scale gradient."""
        X, y = self._batch(batch)
        self._check_labels(y)
        scale = self.train_size / len(y)
        Ws, bs, rho = self._split(theta)

        acts = [X]
        pre = []
        a = X
        for k in range(self.n_layers):
            z = a @ Ws[k] + bs[k]
            pre.append(z)
            a = self._act(z) if k < self.n_layers - 1 else z
            acts.append(a)
        logits = acts[-1]
        lse = logsumexp(logits, axis=1)
        rows = np.arange(len(y))
        nll = float(np.sum(lse - logits[rows, y]))

        grad = np.zeros(self.dim)
        gviews = self.registry.unpack(grad)
        dz = np.exp(logits - lse[:, None])
        dz[rows, y] -= 1.0
        dz *= scale
        for k in reversed(range(self.n_layers)):
            gviews[2 * k][...] = acts[k].T @ dz
            gviews[2 * k + 1][...] = dz.sum(axis=0)
            if k > 0:
                da = dz @ Ws[k].T
                dz = da * self._act_grad(pre[k - 1], acts[k])

        layers = self._layers_for_prior(Ws, bs)
        logp = prior_log_density(self.prior, layers, rho)
        pgrads, prho = prior_log_density_grad(self.prior, layers, rho)
        for k in range(self.n_layers):
            nw = Ws[k].size
            gviews[2 * k][...] -= pgrads[k][:nw].reshape(Ws[k].shape)
            gviews[2 * k + 1][...] -= pgrads[k][nw:]
        if rho is not None:
            gviews[-1][...] -= prho
        return scale * nll - logp, grad

    def log_potential(self, theta, batch=None) -> float:
        return self._value_and_grad(theta, batch)[0]

    def full_grad(self, theta) -> np.ndarray:
        return self._value_and_grad(theta, None)[1]

    def stoch_value_and_grad(self, theta, batch=None, rng=None):
        u, g = self._value_and_grad(theta, batch)
        return u, g / self.train_size

    def initial_position(self, rng):
        theta = np.zeros(self.dim)
        views = self.registry.unpack(theta)
        for k in range(self.n_layers):
            fan_in = self.sizes[k]
            views[2 * k][...] = rng.normal(views[2 * k].size).reshape(views[2 * k].shape) / math.sqrt(
                fan_in
            )
        return theta


def mlp_log_potential(target: MlpTarget, theta, batch=None) -> float:
    return target.log_potential(theta, batch)


def mlp_grad(target: MlpTarget, theta, batch=None, rng=None) -> np.ndarray:
    return target.stoch_grad(theta, batch, rng)


def funnel_log_potential(target: FunnelTarget, theta) -> float:
    return target.log_potential(theta)


def funnel_grad(target: FunnelTarget, theta, rng=None) -> np.ndarray:
    return target.stoch_grad(theta, None, rng)
