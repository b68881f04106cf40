"""Internal helper functions."""
from typing import Callable, Optional, Type

import numpy as np
from scipy.special import logsumexp

LOG_2PI = float(np.log(2.0 * np.pi))


def as_batch(x: np.ndarray) -> np.ndarray:
    """Returns ``x`` as a float (n, d) array; a (d,) vector becomes one row."""
    array = np.asarray(x, dtype=float)
    if array.ndim == 0:
        return array.reshape(1, 1)
    if array.ndim == 1:
        return array.reshape(1, -1)
    return array


def as_times(t, n: int) -> np.ndarray:
    """Broadcasts a scalar or (n,) time to a float (n,) array."""
    times = np.asarray(t, dtype=float)
    if times.ndim == 0:
        return np.full(n, float(times))
    return times.reshape(n)


def check_finite(
    array: np.ndarray, error: Type[Exception], message: str, **kwargs
) -> np.ndarray:
    """Raises ``error(message, **kwargs)`` unless every entry of ``array`` is
    finite; returns the array otherwise."""
    if not np.all(np.isfinite(array)):
        raise error(message, **kwargs)
    return array


def standard_normal_log_density(x: np.ndarray) -> np.ndarray:
    """Row-wise log N(x; 0, I) for an (n, d) array."""
    batch = as_batch(x)
    return -0.5 * np.sum(batch**2, axis=1) - 0.5 * batch.shape[1] * LOG_2PI


def isotropic_normal_log_density(
    x: np.ndarray, mean: np.ndarray, variance
) -> np.ndarray:
    """Row-wise log N(x; mean, variance I); ``variance`` is a scalar or (n,)."""
    batch = as_batch(x)
    variance = np.asarray(variance, dtype=float)
    if variance.ndim == 1:
        variance = variance[:, None]
    d = batch.shape[1]
    squaredDistance = np.sum((batch - mean) ** 2 / variance, axis=1)
    logVariance = np.log(variance).reshape(-1) if variance.ndim else np.log(variance)
    return -0.5 * squaredDistance - 0.5 * d * (LOG_2PI + logVariance)


def difference_step(x: np.ndarray, relative: float = 1e-4) -> np.ndarray:
    """Per-row central-difference step ``relative * (1 + |x|_inf)``."""
    return relative * (1.0 + np.max(np.abs(x), axis=1))


def central_divergence(
    field: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    relative: float = 1e-4,
) -> np.ndarray:
    """Divergence of a vector field at each row of ``x`` by central
    differences, with step ``relative * (1 + |x|_inf)`` per row."""
    batch = as_batch(x)
    h = difference_step(batch, relative)
    divergence = np.zeros(batch.shape[0])
    for i in range(batch.shape[1]):
        shift = np.zeros_like(batch)
        shift[:, i] = h
        plus = field(batch + shift)[:, i]
        minus = field(batch - shift)[:, i]
        divergence += (plus - minus) / (2.0 * h)
    return divergence


def central_vjp(
    field: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    cotangent: np.ndarray,
    relative: float = 1e-4,
) -> np.ndarray:
    """Vector-Jacobian product ``cotangent^T d field / dx`` row-wise by
    central differences."""
    batch = as_batch(x)
    h = difference_step(batch, relative)
    out = np.zeros_like(batch)
    for i in range(batch.shape[1]):
        shift = np.zeros_like(batch)
        shift[:, i] = h
        column = (field(batch + shift) - field(batch - shift)) / (2.0 * h[:, None])
        out[:, i] = np.sum(cotangent * column, axis=1)
    return out


def log_mean_exp(values: np.ndarray, axis: Optional[int] = None) -> np.ndarray:
    """Numerically stable log of the mean of exp(values)."""
    values = np.asarray(values, dtype=float)
    count = values.size if axis is None else values.shape[axis]
    return logsumexp(values, axis=axis) - np.log(count)
