"""Test cases for the __helpers__ module."""
import numpy as np
import pytest
from scipy.stats import multivariate_normal

from pydiffbridge.exceptions import SimulationError
from pydiffbridge.helpers import (
    as_batch,
    as_times,
    central_divergence,
    central_vjp,
    check_finite,
    isotropic_normal_log_density,
    log_mean_exp,
    standard_normal_log_density,
)


def test_as_batch_shapes() -> None:
    """It promotes scalars and vectors to row batches."""
    assert as_batch(2.0).shape == (1, 1)
    assert as_batch(np.ones(3)).shape == (1, 3)
    assert as_batch(np.ones((4, 3))).shape == (4, 3)


def test_as_times_broadcast() -> None:
    """It broadcasts a scalar time to every row."""
    assert np.array_equal(as_times(0.5, 3), np.full(3, 0.5))
    assert as_times(np.arange(3.0), 3).shape == (3,)


def test_check_finite_raises() -> None:
    """It raises the requested error with its keyword arguments."""
    with pytest.raises(SimulationError) as error:
        check_finite(np.array([1.0, np.nan]), SimulationError, "bad", step=4)
    assert error.value.step == 4


def test_normal_log_densities(rng: np.random.Generator) -> None:
    """It agrees with scipy's multivariate normal."""
    x = rng.standard_normal((6, 2))
    mean = np.array([0.5, -1.0])
    expected = multivariate_normal(mean, 0.3 * np.eye(2)).logpdf(x)
    assert np.allclose(isotropic_normal_log_density(x, mean, 0.3), expected)
    assert np.allclose(
        standard_normal_log_density(x), multivariate_normal(np.zeros(2)).logpdf(x)
    )


def test_normal_log_density_per_row_variance(rng: np.random.Generator) -> None:
    """It uses one variance per row when given a vector."""
    x = rng.standard_normal((4, 3))
    variances = np.array([0.2, 1.0, 2.5, 7.0])
    expected = [
        multivariate_normal(np.zeros(3), v * np.eye(3)).logpdf(row)
        for row, v in zip(x, variances)
    ]
    assert np.allclose(isotropic_normal_log_density(x, np.zeros(3), variances), expected)


def test_central_divergence_linear_field(rng: np.random.Generator) -> None:
    """It returns the trace of a linear map."""
    matrix = rng.standard_normal((3, 3))
    x = rng.standard_normal((5, 3))
    divergence = central_divergence(lambda z: z @ matrix.T, x)
    assert np.allclose(divergence, np.trace(matrix), atol=1e-8)


def test_central_vjp_quadratic_field(rng: np.random.Generator) -> None:
    """It matches the analytic vector-Jacobian product of x -> x^2."""
    x = rng.standard_normal((4, 2))
    cotangent = rng.standard_normal((4, 2))
    assert np.allclose(central_vjp(lambda z: z**2, x, cotangent), 2 * x * cotangent, atol=1e-6)


def test_log_mean_exp_stable() -> None:
    """It handles large magnitudes without overflow."""
    values = np.array([1000.0, 1000.0])
    assert log_mean_exp(values) == pytest.approx(1000.0)
