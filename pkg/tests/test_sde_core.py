"""Test cases for the __sde_core__ module."""
import numpy as np
import pytest

from pydiffbridge.exceptions import DomainError, GridError, SimulationError
from pydiffbridge.sde_core import (
    Direction,
    DriftFunction,
    TimeGrid,
    euler_maruyama,
    ou_drift,
    ou_gaussian_marginal,
    ou_log_transition_density,
    ou_moments,
    ou_transition,
    ou_transition_score,
    probability_flow,
)

TIMES = np.geomspace(1e-3, 50.0, 101)


def test_ou_moments_stationarity() -> None:
    """It keeps alpha^2 + v = 1 for every t."""
    alpha, variance = ou_moments(TIMES)
    assert np.max(np.abs(alpha**2 + variance - 1.0)) < 1e-12


def test_ou_moments_chapman_kolmogorov() -> None:
    """It composes alphas and variances over consecutive intervals."""
    s, t = np.meshgrid(TIMES[::5], TIMES[::5])
    aS, vS = ou_moments(s)
    aT, vT = ou_moments(t)
    aST, vST = ou_moments(s + t)
    assert np.max(np.abs(aS * aT - aST)) < 1e-12
    assert np.max(np.abs(aT**2 * vS + vT - vST)) < 1e-12


def test_ou_moments_at_log_two() -> None:
    """It returns alpha = 1/sqrt(2) and v = 1/2 at t = log 2."""
    alpha, variance = ou_moments(np.log(2.0))
    assert alpha == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-15)
    assert variance == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("t", [0.0, -1.0, np.nan])
def test_ou_moments_domain(t: float) -> None:
    """It rejects non-positive elapsed times."""
    with pytest.raises(DomainError):
        ou_moments(t)


def test_ou_transition_fields() -> None:
    """It bundles the moments with the elapsed time."""
    transition = ou_transition(2.0)
    assert transition.elapsed == 2.0
    assert transition.alpha == pytest.approx(np.exp(-1.0))
    assert transition.variance == pytest.approx(1.0 - np.exp(-2.0))


def test_ou_transition_score_finite_differences(rng: np.random.Generator) -> None:
    """It matches the gradient of the log transition density."""
    x0 = rng.standard_normal((5, 3))
    xt = rng.standard_normal((5, 3))
    t = 0.7
    score = ou_transition_score(x0, xt, t)
    h = 1e-6
    for i in range(3):
        shift = np.zeros(3)
        shift[i] = h
        estimate = (
            ou_log_transition_density(x0, xt + shift, t)
            - ou_log_transition_density(x0, xt - shift, t)
        ) / (2.0 * h)
        assert np.max(np.abs(estimate - score[:, i])) < 1e-6


def test_ou_transition_score_stationary_limit() -> None:
    """It tends to -x_t for large t."""
    xt = np.array([[1.5, -2.0]])
    score = ou_transition_score(np.array([[3.0, 3.0]]), xt, 60.0)
    assert np.allclose(score, -xt, atol=1e-10)


def test_ou_gaussian_marginal_stationary() -> None:
    """It keeps N(0, 1) invariant."""
    mean, variance = ou_gaussian_marginal(np.zeros(2), 1.0, 3.0)
    assert np.allclose(mean, 0.0)
    assert variance == pytest.approx(1.0, abs=1e-15)


def test_ou_gaussian_marginal_zero_time() -> None:
    """It returns the initial law at t = 0."""
    mean, variance = ou_gaussian_marginal(np.array([2.0]), 0.3, 0.0)
    assert mean[0] == 2.0
    assert variance == pytest.approx(0.3)


def test_time_grid_uniform() -> None:
    """It builds uniform steps ending exactly at the horizon."""
    grid = TimeGrid.uniform(5.0, 64)
    assert grid.steps == 64
    assert grid.times[-1] == 5.0
    assert np.allclose(grid.step_sizes, 5.0 / 64)
    assert np.allclose(grid.reversed_times(), 5.0 - grid.times)


@pytest.mark.parametrize(
    "times", [[0.0], [0.1, 0.5], [0.0, 0.5, 0.5], [0.0, 1.0, 0.5]]
)
def test_time_grid_invalid(times) -> None:
    """It rejects grids that are short, shifted or not increasing."""
    with pytest.raises(GridError):
        TimeGrid(np.array(times))


def test_euler_maruyama_stationary_moments(rng: np.random.Generator) -> None:
    """It preserves N(0, 1) within three standard errors."""
    n = 100000
    grid = TimeGrid.uniform(5.0, 64)
    path = euler_maruyama(ou_drift(), grid, rng.standard_normal((n, 1)), rng)
    terminal = path.terminal[:, 0]
    # Euler-Maruyama keeps a stationary variance of 1 / (1 - gamma / 4)
    gamma = grid.step_sizes[0]
    expected = 1.0 / (1.0 - gamma / 4.0)
    assert abs(terminal.mean()) < 3.0 * np.sqrt(expected / n)
    assert abs(terminal.var() - expected) < 3.0 * expected * np.sqrt(2.0 / n)


def test_euler_maruyama_marginal_moments(rng: np.random.Generator) -> None:
    """It reproduces the OU marginal from a point mass."""
    n = 100000
    grid = TimeGrid.uniform(1.0, 64)
    path = euler_maruyama(ou_drift(), grid, np.full((n, 1), 2.0), rng)
    mean, variance = ou_gaussian_marginal(np.array([2.0]), 0.0, 1.0)
    terminal = path.terminal[:, 0]
    assert abs(terminal.mean() - mean[0]) < 3.0 * np.sqrt(variance / n) + 5e-3
    assert abs(terminal.var() - variance) < 3.0 * variance * np.sqrt(2.0 / n) + 5e-3


def test_euler_maruyama_explicit_noise() -> None:
    """It follows the recorded increments deterministically."""
    grid = TimeGrid.uniform(1.0, 4)
    noise = np.ones((4, 1, 1))
    path = euler_maruyama(ou_drift(), grid, np.zeros((1, 1)), noise=noise)
    state = 0.0
    for gamma in grid.step_sizes:
        state = state - 0.5 * gamma * state + np.sqrt(gamma)
    assert path.terminal[0, 0] == pytest.approx(state)
    assert path.direction is Direction.FORWARD
    assert np.array_equal(path.noise, noise)


def test_euler_maruyama_conditional_drift(rng: np.random.Generator) -> None:
    """It passes the observation to a conditional drift."""
    seen = []

    def drift(t, x, y):
        seen.append(y.shape)
        return y - x

    grid = TimeGrid.uniform(1.0, 3)
    euler_maruyama(
        DriftFunction(drift, conditional=True), grid, np.zeros((4, 2)), rng, y=np.ones(2)
    )
    assert seen == [(4, 2)] * 3


def test_euler_maruyama_non_finite(rng: np.random.Generator) -> None:
    """It names the step of a non-finite drift."""
    grid = TimeGrid.uniform(1.0, 4)
    drift = DriftFunction(lambda t, x: x * (np.inf if t > 0.3 else 1.0))
    with pytest.raises(SimulationError) as error:
        euler_maruyama(drift, grid, np.ones((2, 1)), rng)
    assert error.value.step == 2


def test_euler_maruyama_needs_randomness() -> None:
    """It refuses to invent noise."""
    with pytest.raises(SimulationError):
        euler_maruyama(ou_drift(), TimeGrid.uniform(1.0, 2), np.zeros(1))


def test_probability_flow_gaussian_log_density() -> None:
    """It reconstructs log N(x; 0, 4) through the flow."""
    grid = TimeGrid.uniform(4.0, 200)

    def variance(t):
        return 4.0 * np.exp(-t) - np.expm1(-t)

    score = lambda t, x: -x / variance(t)
    xs = np.linspace(-3.0, 3.0, 13)[:, None]
    path, logdet = probability_flow(ou_drift(), score, grid, xs)
    varT = variance(4.0)
    logPT = -0.5 * path.terminal[:, 0] ** 2 / varT - 0.5 * np.log(2 * np.pi * varT)
    logP0 = -0.5 * xs[:, 0] ** 2 / 4.0 - 0.5 * np.log(2 * np.pi * 4.0)
    assert np.max(np.abs(logPT + logdet - logP0)) < 1e-3


def test_probability_flow_stationary() -> None:
    """It leaves stationary states fixed with zero logdet."""
    grid = TimeGrid.uniform(2.0, 16)
    xs = np.array([[-1.0, 0.5], [2.0, 0.0]])
    path, logdet = probability_flow(ou_drift(), lambda t, x: -x, grid, xs)
    assert np.allclose(path.terminal, xs, atol=1e-12)
    assert np.max(np.abs(logdet)) < 1e-9


def test_probability_flow_exact_divergence() -> None:
    """It uses an exact divergence hook when given one."""
    grid = TimeGrid.uniform(1.0, 8)
    calls = []

    def divergence(t, x):
        calls.append(t)
        return np.zeros(x.shape[0])

    _, logdet = probability_flow(
        ou_drift(), lambda t, x: -x, grid, np.array([0.3]), divergence=divergence
    )
    assert logdet == 0.0
    assert len(calls) == 4 * grid.steps
