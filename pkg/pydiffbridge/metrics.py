"""Sample quality metrics against analytic references."""
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import kstest, kstwo

from .config import Defaults
from .exceptions import ConfigError, DomainError, UnsupportedError
from .models import (
    MODEL_NAMES,
    TARGET_NAMES,
    TargetDensity,
    build_model,
    build_target,
    posterior_target,
)

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclass
class MetricsRecord:
    """Per-run scalars written as ``metrics.json``."""

    algorithm: str
    samples: int
    dimension: int
    schema_version: str = Defaults.SCHEMA_VERSION
    mean_error: Optional[List[float]] = None
    covariance_error: Optional[float] = None
    ks_statistics: Optional[List[Optional[float]]] = None
    ess: Optional[float] = None
    mode_weights: Optional[List[float]] = None
    log_z: Dict[str, float] = field(default_factory=dict)
    loss_traces: Dict[str, List[float]] = field(default_factory=dict)
    diagnostics: List[Dict[str, object]] = field(default_factory=list)
    checks: Dict[str, float] = field(default_factory=dict)
    wall_clock_seconds: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        """Plain dict with non-finite reals replaced by ``None``."""
        return _finite(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)


def _finite(value):
    if isinstance(value, dict):
        return {key: _finite(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(item) for item in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def effective_sample_size(log_weights: Array) -> float:
    """``(sum w)^2 / sum w^2`` from log-weights."""
    logWeights = np.asarray(log_weights, dtype=float).ravel()
    if logWeights.size == 0:
        raise DomainError("no importance weights")
    scaled = np.exp(logWeights - np.max(logWeights))
    return float(scaled.sum() ** 2 / np.sum(scaled**2))


def ks_null_quantile(n: int, level: float = 0.99) -> float:
    """Quantile of the one-sample KS statistic under the null at size n."""
    return float(kstwo.ppf(level, n))


def mode_weights(samples: Array, modes: Array) -> Array:
    """Fraction of samples whose nearest mode is each of ``modes``."""
    sq = np.sum((samples[:, None, :] - modes[None, :, :]) ** 2, axis=2)
    nearest = np.argmin(sq, axis=1)
    return np.bincount(nearest, minlength=modes.shape[0]) / samples.shape[0]


def eval_metrics(
    samples: Array,
    reference: Optional[TargetDensity] = None,
    log_weights: Optional[Array] = None,
    algorithm: str = "eval",
) -> MetricsRecord:
    """Compares samples with a reference distribution.

    Parameters:
    samples: draws, (n, d).
    reference: analytic reference; moments, marginal CDFs and modes are used
    where it has them.
    log_weights: importance log-weights of the draws, when there are any.
    algorithm: label stored in the record.

    Returns a MetricsRecord.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] == 0:
        raise DomainError("cannot evaluate an empty sample set")
    n, d = samples.shape
    record = MetricsRecord(algorithm=algorithm, samples=n, dimension=d)

    if log_weights is not None:
        record.ess = effective_sample_size(log_weights)

    if reference is None:
        return record
    if reference.dimension != d:
        raise DomainError(
            f"samples have dimension {d}, reference {reference.name} has "
            f"{reference.dimension}"
        )
    if reference.mean is not None:
        record.mean_error = list(np.abs(samples.mean(axis=0) - reference.mean))
    if reference.covariance is not None and n > 1:
        empirical = np.atleast_2d(np.cov(samples, rowvar=False))
        record.covariance_error = float(
            np.linalg.norm(empirical - reference.covariance)
        )
    if reference.marginal_cdf is not None:
        statistics: List[Optional[float]] = []
        for i in range(d):
            if reference.marginal_cdf(i, samples[:1, i]) is None:
                statistics.append(None)
                continue
            cdf = lambda v, i=i: reference.marginal_cdf(i, np.asarray(v))
            statistics.append(float(kstest(samples[:, i], cdf).statistic))
        record.ks_statistics = statistics
    if reference.modes is not None:
        record.mode_weights = list(mode_weights(samples, reference.modes))
    logger.debug("evaluated %d samples against %s", n, reference.name)
    return record


def resolve_reference(
    name: str, params: Mapping[str, str], observation: Sequence[float] = ()
) -> Optional[TargetDensity]:
    """Reference distribution for a model section: the target itself, or the
    analytic posterior at ``observation`` for a joint model. ``None`` when
    the joint model has no closed-form posterior."""
    if name in TARGET_NAMES:
        return build_target(name, params)
    if name in MODEL_NAMES:
        model = build_model(name, params)
        if not observation:
            raise ConfigError(
                "sampling.observation: a joint model needs an observation",
                "sampling.observation",
            )
        y = np.asarray(observation, dtype=float)
        if y.size != model.obs_dim:
            raise ConfigError(
                f"sampling.observation: expected {model.obs_dim} values, got {y.size}",
                "sampling.observation",
            )
        try:
            return posterior_target(model, y)
        except UnsupportedError:
            return None
    raise ConfigError(
        f"model.name: unknown model {name!r}, expected one of "
        f"{', '.join(TARGET_NAMES + MODEL_NAMES)}",
        "model.name",
    )
