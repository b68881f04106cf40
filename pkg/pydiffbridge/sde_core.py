"""Time grids, the Ornstein-Uhlenbeck reference process in closed form,
Euler-Maruyama simulation of unit-diffusion SDEs and the probability flow ODE.

The reference (noising) process is ``dX_t = -X_t/2 dt + dB_t`` whose
transition ``p_{t|0}(.|x_0)`` is ``N(alpha(t) x_0, v(t) I)`` with
``alpha(t) = exp(-t/2)`` and ``v(t) = 1 - exp(-t)``.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Tuple, Union

import numpy as np

from .exceptions import DomainError, GridError, IntegrationError, SimulationError
from .helpers import as_batch, central_divergence, check_finite

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class Direction(Enum):
    """Time direction in which a path was simulated."""

    FORWARD = "forward"
    BACKWARD = "backward"


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TimeGrid:
    """Discretization ``0 = t_0 < ... < t_K = T`` of the diffusion interval."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise GridError("a time grid needs at least two time points")
        if times[0] != 0.0:
            raise GridError(f"a time grid starts at 0, got {times[0]}")
        if not np.all(np.diff(times) > 0):
            raise GridError("time grid must be strictly increasing")
        object.__setattr__(self, "times", _frozen(times))

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "TimeGrid":
        """Uniform grid with ``steps`` steps on [0, horizon]."""
        if horizon <= 0:
            raise GridError(f"horizon must be positive, got {horizon}")
        if steps < 1:
            raise GridError(f"steps must be a positive integer, got {steps}")
        times = np.linspace(0.0, float(horizon), int(steps) + 1)
        times[-1] = float(horizon)
        return cls(times)

    @property
    def horizon(self) -> float:
        """Total diffusion time T."""
        return float(self.times[-1] - self.times[0])

    @property
    def steps(self) -> int:
        """Number of steps K."""
        return self.times.size - 1

    @property
    def step_sizes(self) -> np.ndarray:
        """Step sizes ``gamma_k = t_k - t_{k-1}``, k = 1..K."""
        return np.diff(self.times)

    def reversed_times(self) -> np.ndarray:
        """Forward times ``T - tau_k`` visited by a backward process."""
        return self.horizon - self.times

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class Path:
    """A batch of discretized trajectories.

    ``states`` has shape (K+1, n, d); ``noise`` (K, n, d) stores the standard
    normal increments that produced the states, when recorded."""

    grid: TimeGrid
    states: np.ndarray
    direction: Direction = Direction.FORWARD
    noise: Optional[np.ndarray] = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 2:
            states = states[:, None, :]
        if states.shape[0] != len(self.grid):
            raise GridError(
                f"path has {states.shape[0]} states for a grid of {len(self.grid)}"
            )
        object.__setattr__(self, "states", _frozen(states))
        if self.noise is not None:
            noise = np.asarray(self.noise, dtype=float).reshape(
                self.grid.steps, *states.shape[1:]
            )
            object.__setattr__(self, "noise", _frozen(noise))

    @property
    def dimension(self) -> int:
        """State dimension d."""
        return self.states.shape[2]

    @property
    def initial(self) -> np.ndarray:
        """States at the first grid point, shape (n, d)."""
        return self.states[0]

    @property
    def terminal(self) -> np.ndarray:
        """States at the last grid point, shape (n, d)."""
        return self.states[-1]


@dataclass(frozen=True)
class OUTransition:
    """Moments of the OU transition over elapsed time ``t``."""

    elapsed: float
    alpha: float
    variance: float


def ou_moments(t: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """Returns ``(alpha(t), v(t)) = (exp(-t/2), 1 - exp(-t))``.

    Parameters:
    t: elapsed time(s), all > 0.

    Returns the mean scale and variance of ``p_{t|0}``.
    """
    times = np.asarray(t, dtype=float)
    if np.any(times <= 0) or not np.all(np.isfinite(times)):
        raise DomainError(f"OU moments need t > 0, got {t}")
    alpha = np.exp(-0.5 * times)
    variance = -np.expm1(-times)
    if times.ndim == 0:
        return float(alpha), float(variance)
    return alpha, variance


def ou_transition(t: float) -> OUTransition:
    """Returns the OUTransition over elapsed time ``t``."""
    alpha, variance = ou_moments(t)
    return OUTransition(elapsed=float(t), alpha=alpha, variance=variance)


def _column(values: ArrayLike, n: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        return values
    return values.reshape(n, 1)


def ou_transition_score(x0: np.ndarray, xt: np.ndarray, t: ArrayLike) -> np.ndarray:
    """Score ``grad_{x_t} log p_{t|0}(x_t | x_0) = (alpha x_0 - x_t) / v``.

    ``x0`` and ``xt`` are (d,) or (n, d); ``t`` is a scalar or (n,)."""
    x0 = np.asarray(x0, dtype=float)
    xt = np.asarray(xt, dtype=float)
    alpha, variance = ou_moments(t)
    n = xt.shape[0] if xt.ndim == 2 else 1
    return (_column(alpha, n) * x0 - xt) / _column(variance, n)


def ou_log_transition_density(
    x0: np.ndarray, xt: np.ndarray, t: ArrayLike
) -> np.ndarray:
    """Row-wise ``log p_{t|0}(x_t | x_0)``."""
    x0 = as_batch(x0)
    xt = as_batch(xt)
    alpha, variance = ou_moments(t)
    n = xt.shape[0]
    alpha = _column(alpha, n)
    variance = np.asarray(variance, dtype=float).reshape(-1)
    sq = np.sum((xt - alpha * x0) ** 2, axis=1) / variance
    return -0.5 * sq - 0.5 * xt.shape[1] * np.log(2.0 * np.pi * variance)


def ou_gaussian_marginal(
    m0: np.ndarray, s0sq: float, t: float
) -> Tuple[np.ndarray, float]:
    """Marginal of ``X_t`` when ``X_0 ~ N(m0, s0sq I)``.

    Returns ``(exp(-t/2) m0, s0sq exp(-t) + 1 - exp(-t))``."""
    if s0sq < 0:
        raise DomainError(f"initial variance must be >= 0, got {s0sq}")
    if t < 0:
        raise DomainError(f"elapsed time must be >= 0, got {t}")
    mean = np.exp(-0.5 * t) * np.asarray(m0, dtype=float)
    return mean, float(s0sq * np.exp(-t) - np.expm1(-t))


@dataclass(frozen=True)
class DriftFunction:
    """A drift ``(t, x[, y]) -> R^d`` evaluated on (n, d) batches."""

    fn: Callable[..., np.ndarray]
    conditional: bool = False
    name: str = field(default="drift", compare=False)

    def __call__(self, t, x: np.ndarray, y: Optional[np.ndarray] = None) -> np.ndarray:
        if self.conditional:
            return self.fn(t, x, y)
        return self.fn(t, x)


def ou_drift() -> DriftFunction:
    """The reference drift ``f^0(x) = -x/2``."""
    return DriftFunction(lambda t, x: -0.5 * x, name="ou")


def _broadcast_observation(y: Optional[np.ndarray], n: int) -> Optional[np.ndarray]:
    if y is None:
        return None
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return np.broadcast_to(y, (n, y.size))
    return y


def euler_maruyama(
    drift: DriftFunction,
    grid: TimeGrid,
    x0: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    y: Optional[np.ndarray] = None,
    noise: Optional[np.ndarray] = None,
    direction: Direction = Direction.FORWARD,
) -> Path:
    """Simulates ``x_{k+1} = x_k + gamma_{k+1} f(t_k, x_k[, y]) +
    sqrt(gamma_{k+1}) xi_k``.

    Parameters:
    drift: the drift, evaluated at the left end of each step.
    grid: time grid; ``t_k`` is passed to the drift.
    x0: initial state(s), (d,) or (n, d).
    rng: source of the standard normal increments ``xi_k``.
    y: optional observation held constant along each path, (p,) or (n, p).
    noise: explicit increments of shape (K, n, d), overriding ``rng``.
    direction: tag recorded on the returned Path.

    Returns the Path with its noise record.
    """
    state = as_batch(x0).copy()
    n, d = state.shape
    if noise is None:
        if rng is None:
            raise SimulationError("euler_maruyama needs rng or explicit noise")
        noise = rng.standard_normal((grid.steps, n, d))
    else:
        noise = np.asarray(noise, dtype=float).reshape(grid.steps, n, d)
    observation = _broadcast_observation(y, n)

    states = np.empty((grid.steps + 1, n, d))
    states[0] = state
    gammas = grid.step_sizes
    for k in range(grid.steps):
        velocity = check_finite(
            drift(grid.times[k], state, observation),
            SimulationError,
            f"non-finite drift at step {k}",
            step=k,
        )
        state = state + gammas[k] * velocity + np.sqrt(gammas[k]) * noise[k]
        check_finite(
            state, SimulationError, f"non-finite state at step {k + 1}", step=k + 1
        )
        states[k + 1] = state
    return Path(grid=grid, states=states, direction=direction, noise=noise)


def probability_flow(
    drift: DriftFunction,
    score: Callable[[float, np.ndarray], np.ndarray],
    grid: TimeGrid,
    x0: np.ndarray,
    divergence: Optional[Callable[[float, np.ndarray], np.ndarray]] = None,
    relative_step: float = 1e-4,
) -> Tuple[Path, Union[float, np.ndarray]]:
    """Integrates the probability flow ``dx = (f_t(x) - score_t(x)/2) dt``
    with classical RK4 on ``grid``, accumulating ``int div(fbar_t)(x_t) dt``.

    Parameters:
    drift: SDE drift ``f``.
    score: marginal score ``(t, x) -> grad log p_t(x)``.
    grid: integration grid, from t_0 = 0 to t_K = T.
    x0: starting point(s), (d,) or (n, d).
    divergence: exact ``(t, x) -> div fbar_t(x)``; central differences with
    step ``relative_step * (1 + |x|_inf)`` when omitted.

    Returns the flow path and ``logdet`` such that
    ``log p_0(x_0) = log p_T(x_T) + logdet``.
    """
    single = np.asarray(x0).ndim <= 1
    state = as_batch(x0).copy()

    def velocity(t: float, x: np.ndarray) -> np.ndarray:
        return drift(t, x) - 0.5 * score(t, x)

    def div(t: float, x: np.ndarray) -> np.ndarray:
        if divergence is not None:
            return np.asarray(divergence(t, x), dtype=float).reshape(x.shape[0])
        return central_divergence(lambda z: velocity(t, z), x, relative_step)

    states = np.empty((grid.steps + 1,) + state.shape)
    states[0] = state
    logdet = np.zeros(state.shape[0])
    for k in range(grid.steps):
        t = grid.times[k]
        h = grid.times[k + 1] - t
        k1 = velocity(t, state)
        x2 = state + 0.5 * h * k1
        k2 = velocity(t + 0.5 * h, x2)
        x3 = state + 0.5 * h * k2
        k3 = velocity(t + 0.5 * h, x3)
        x4 = state + h * k3
        k4 = velocity(t + h, x4)
        logdet += (h / 6.0) * (
            div(t, state)
            + 2.0 * div(t + 0.5 * h, x2)
            + 2.0 * div(t + 0.5 * h, x3)
            + div(t + h, x4)
        )
        state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(state)) or not np.all(np.isfinite(logdet)):
            raise IntegrationError(f"non-finite probability flow state at step {k + 1}")
        states[k + 1] = state
    path = Path(grid=grid, states=states, direction=Direction.FORWARD)
    if single:
        return path, float(logdet[0])
    return path, logdet
