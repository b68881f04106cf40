"""Conditional Schrödinger bridge posterior sampler trained by iterative
proportional fitting with mean matching.

Both drifts live in forward-time indexing and are network corrections of the
reference drift ``-x/2``:

  forward chain   x_{k+1} = x_k + g_{k+1} f(t_k, x_k, y) + sqrt(g_{k+1}) xi
  backward chain  x_k = x_{k+1} + g_{k+1} b(t_{k+1}, x_{k+1}, y) + sqrt(g_{k+1}) xi

The observation y is drawn once per trajectory and held constant along it.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.stats import kstest

from .approximator import (
    AdamConfig,
    Architecture,
    NetworkConfig,
    ParametricFunction,
    Tape,
    fit,
    value_and_gradient,
)
from .config import Defaults
from .exceptions import ConfigError, IpfError, SimulationError, TrainingError
from .models import JointModel
from .sde_core import Direction, DriftFunction, Path, TimeGrid, euler_maruyama

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class DsbConfig:
    """IPF settings of the conditional bridge."""

    grid: TimeGrid
    rounds: int = 5
    inner_iterations: int = 2000
    batch_size: int = 128
    warm_start: bool = True
    diagnostic_samples: int = 2000
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    progress: Optional[bool] = None

    def __post_init__(self):
        if self.rounds < 0:
            raise ConfigError("dsb_ps.rounds: must be >= 0", "dsb_ps.rounds")
        if self.batch_size < 1:
            raise ConfigError("dsb_ps.batch_size: must be >= 1", "dsb_ps.batch_size")

    @classmethod
    def from_defaults(cls, **overrides) -> "DsbConfig":
        """Short-horizon grid from ``[grid] bridge_*`` and ``[dsb_ps]``."""
        values = dict(
            grid=TimeGrid.uniform(
                Defaults.get_float("grid", "bridge_horizon"),
                Defaults.get_int("grid", "bridge_steps"),
            ),
            rounds=Defaults.get_int("dsb_ps", "rounds"),
            inner_iterations=Defaults.get_int("dsb_ps", "inner_iterations"),
            batch_size=Defaults.get_int("dsb_ps", "batch_size"),
            warm_start=Defaults.get_bool("dsb_ps", "warm_start"),
            optimizer=AdamConfig.from_defaults(),
            network=NetworkConfig.from_defaults(),
        )
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class IpfState:
    """Networks after the latest half-step; ``None`` means a zero correction,
    i.e. the drift ``-x/2``."""

    iteration: int
    forward: Optional[ParametricFunction]
    backward: Optional[ParametricFunction]
    config: DsbConfig
    last_direction: Optional[Direction] = None
    diagnostics: List[Dict[str, object]] = field(default_factory=list)


def _corrected(network: Optional[ParametricFunction]) -> Callable[..., Array]:
    def drift(t, x: Array, y: Array) -> Array:
        base = -0.5 * x
        if network is None:
            return base
        return base + network.evaluate(t, x, y)

    return drift


def forward_drift(state: IpfState) -> DriftFunction:
    """Current forward drift ``f(t, x, y)``."""
    return DriftFunction(_corrected(state.forward), conditional=True, name="forward")


def backward_drift(state: IpfState) -> DriftFunction:
    """Current backward drift ``b(t, x, y)`` in forward-time indexing."""
    return DriftFunction(_corrected(state.backward), conditional=True, name="backward")


def mean_matching_target(
    step_map: Callable[[Array], Array], x_k: Array, x_next: Array
) -> Array:
    """``x_next + F(x_k) - F(x_next)`` for the opposite-direction step map F."""
    return x_next + step_map(x_k) - step_map(x_next)


def _backward_grid(grid: TimeGrid) -> TimeGrid:
    return TimeGrid(grid.horizon - grid.times[::-1])


def simulate_forward(
    state: IpfState, x0: Array, y: Array, rng: np.random.Generator
) -> Path:
    """Forward chain from ``x0`` with the current forward drift."""
    return euler_maruyama(forward_drift(state), state.config.grid, x0, rng, y=y)


def simulate_backward(
    state: IpfState, xT: Array, y: Array, rng: np.random.Generator
) -> Path:
    """Backward chain from ``xT``; the returned Path is indexed in forward
    time, so ``path.initial`` holds the generated draws."""
    grid = state.config.grid
    horizon = grid.horizon
    drift = backward_drift(state)
    reversal = DriftFunction(
        lambda tau, z, obs: drift(horizon - tau, z, obs), conditional=True
    )
    path = euler_maruyama(
        reversal, _backward_grid(grid), xT, rng, y=y, direction=Direction.BACKWARD
    )
    return Path(
        grid=grid,
        states=path.states[::-1],
        direction=Direction.BACKWARD,
        noise=path.noise[::-1],
    )


def _transition_arrays(path: Path, y: Array):
    steps, n, d = path.noise.shape
    times = path.grid.times
    gammas = np.repeat(path.grid.step_sizes, n)[:, None]
    return (
        path.states[:-1].reshape(steps * n, d),
        path.states[1:].reshape(steps * n, d),
        np.repeat(times[:-1], n),
        np.repeat(times[1:], n),
        gammas,
        np.tile(y, (steps, 1)),
    )


def _network_for(
    state: IpfState, direction: Direction, model: JointModel, rng: np.random.Generator
) -> ParametricFunction:
    previous = state.backward if direction is Direction.BACKWARD else state.forward
    if previous is not None and state.config.warm_start:
        return previous.copy()
    architecture = Architecture(model.latent_dim, model.obs_dim, state.config.network)
    return ParametricFunction.initialize(architecture, rng)


def terminal_ks(state: IpfState, model: JointModel, rng: np.random.Generator) -> float:
    """Largest per-dimension KS statistic of the forward terminal marginal
    against N(0, 1)."""
    x0, y = model.sample_joint(rng, state.config.diagnostic_samples)
    terminal = simulate_forward(state, x0, y, rng).terminal
    return max(kstest(terminal[:, i], "norm").statistic for i in range(terminal.shape[1]))


def ipf_half_step(
    state: IpfState,
    direction: Direction,
    model: JointModel,
    rng: np.random.Generator,
) -> IpfState:
    """Refits the ``direction`` drift by mean matching on chains of the
    frozen opposite drift.

    Parameters:
    state: current IPF state.
    direction: which network to refit.
    model: joint model; backward half-steps simulate forward chains from
    ``p(x, y)``, forward half-steps simulate backward chains from
    ``N(0, I) p(y)``.
    rng: the only source of randomness.

    Returns the state with the refreshed network and a diagnostics entry.
    """
    config = state.config
    network = _network_for(state, direction, model, rng)
    steps = config.grid.steps
    n = config.batch_size

    def build_batch():
        if direction is Direction.BACKWARD:
            x0, y = model.sample_joint(rng, n)
            path = simulate_forward(state, x0, y, rng)
            xK, xNext, tK, tNext, gammas, ys = _transition_arrays(path, y)
            opposite = forward_drift(state)
            target = mean_matching_target(
                lambda x: x + gammas * opposite(tK, x, ys), xK, xNext
            )
            return xNext, tNext, gammas, ys, target
        y = model.sample_observations(rng, n)
        xT = rng.standard_normal((n, model.latent_dim))
        path = simulate_backward(state, xT, y, rng)
        xK, xNext, tK, tNext, gammas, ys = _transition_arrays(path, y)
        opposite = backward_drift(state)
        target = mean_matching_target(
            lambda x: x + gammas * opposite(tNext, x, ys), xNext, xK
        )
        return xK, tK, gammas, ys, target

    def record(tape: Tape, bound, inputs, times, gammas, ys, target):
        stepMap = inputs * (1.0 - 0.5 * gammas) + bound(times, inputs, ys) * gammas
        residual = stepMap - target
        return tape.mean(tape.sum(tape.square(residual), axis=1)) * float(steps)

    def loss_and_gradient(theta: Array, iteration: int):
        batch = build_batch()
        return value_and_gradient(
            network, lambda tape, bound: record(tape, bound, *batch), theta
        )

    label = f"dsb-ps {direction.value} n={state.iteration}"
    try:
        trained, history = fit(
            network,
            loss_and_gradient,
            config.inner_iterations,
            config.optimizer,
            config.progress,
            description=label,
        )
    except (SimulationError, TrainingError) as error:
        raise IpfError(
            f"{label}: {error}", state.iteration, direction.value
        ) from error

    if direction is Direction.BACKWARD:
        updated = replace(state, backward=trained, last_direction=direction)
    else:
        updated = replace(state, forward=trained, last_direction=direction)
    try:
        ks = terminal_ks(updated, model, rng)
    except SimulationError as error:
        raise IpfError(
            f"{label}: terminal diagnostic: {error}", state.iteration, direction.value
        ) from error
    entry = {
        "iteration": float(state.iteration),
        "direction": direction.value,
        "final_loss": history[-1] if history else float("nan"),
        "terminal_ks": float(ks),
    }
    logger.info(
        "%s: final loss %.6g, terminal KS %.4f", label, entry["final_loss"], ks
    )
    return replace(updated, diagnostics=state.diagnostics + [entry])


def run_dsb_ps(
    model: JointModel,
    config: DsbConfig,
    rng: np.random.Generator,
    on_round: Optional[Callable[[IpfState], None]] = None,
) -> IpfState:
    """One backward half-step against the reference forward drift, then
    ``config.rounds`` rounds of (forward, backward) half-steps. ``on_round``
    sees the state after every completed backward half-step."""
    state = IpfState(iteration=0, forward=None, backward=None, config=config)
    state = ipf_half_step(state, Direction.BACKWARD, model, rng)
    if on_round is not None:
        on_round(state)
    for n in range(1, config.rounds + 1):
        state = replace(state, iteration=n)
        state = ipf_half_step(state, Direction.FORWARD, model, rng)
        state = ipf_half_step(state, Direction.BACKWARD, model, rng)
        if on_round is not None:
            on_round(state)
    return state


def sample_dsb_posterior(
    state: IpfState,
    y: Array,
    n: int,
    rng: np.random.Generator,
    return_path: bool = False,
):
    """Draws from the backward chain started at ``N(0, I)`` with y fixed."""
    if state.backward is None:
        raise IpfError("no backward half-step has been run", state.iteration, "backward")
    dimension = state.backward.architecture.dimension
    y = np.asarray(y, dtype=float).reshape(-1)
    xT = rng.standard_normal((n, dimension))
    path = simulate_backward(state, xT, y, rng)
    return path if return_path else path.initial
