from .base import DENSE_LIMIT, DenseTooLarge, Metric, MetricKind, MetricSpec, Which
from .diagonal import IdentityMetric, RmsPropMetric, WenzelMetric
from .linalg import InverseRootError, inverse_root, shampoo_contract
from .monge import MongeMetric, monge_f, monge_gamma
from .shampoo import ShampooMetric

_CLASSES = {
    MetricKind.IDENTITY: IdentityMetric,
    MetricKind.RMSPROP: RmsPropMetric,
    MetricKind.WENZEL: WenzelMetric,
    MetricKind.MONGE: MongeMetric,
    MetricKind.SHAMPOO: ShampooMetric,
}


def make_metric(spec, registry) -> Metric:
    """Build a freshly initialised metric. `spec` may be a MetricSpec, dict or kind name."""
    if isinstance(spec, dict):
        spec = MetricSpec(**spec)
    elif not isinstance(spec, MetricSpec):
        spec = MetricSpec(kind=spec)
    return _CLASSES[spec.kind](registry, spec)


metric_init = make_metric


def dense_metric(metric: Metric, which, limit: int = DENSE_LIMIT):
    return metric.dense(which, limit)


__all__ = [
    "DENSE_LIMIT",
    "DenseTooLarge",
    "IdentityMetric",
    "InverseRootError",
    "Metric",
    "MetricKind",
    "MetricSpec",
    "MongeMetric",
    "RmsPropMetric",
    "ShampooMetric",
    "WenzelMetric",
    "Which",
    "dense_metric",
    "inverse_root",
    "make_metric",
    "metric_init",
    "monge_f",
    "monge_gamma",
    "shampoo_contract",
]
