"""Schrödinger bridge sampler for unnormalized densities.

Each IPF round fits the marginal score of the current backward process,
then a reverse-KL correction against the target reweighted by the current
initial marginal, and finally adds the correction to the backward drift. The
first round skips the score fit (the marginals are ``N(0, I)``) and is
exactly the h-transform sampler of :mod:`ddgs`.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .approximator import (
    AdamConfig,
    NetworkConfig,
    ParametricFunction,
    Tape,
    fit,
    value_and_gradient,
)
from .config import Defaults
from .ddgs import (
    DdgsConfig,
    StepCoefficients,
    TerminalReference,
    simulate_proposal,
    train_correction,
)
from .ddps import fit_transition_score, transitions_from_path
from .exceptions import (
    ConfigError,
    IntegrationError,
    IpfError,
    LossError,
    SimulationError,
    TrainingError,
)
from .helpers import standard_normal_log_density
from .models import TargetDensity
from .sde_core import DriftFunction, Path, TimeGrid, probability_flow

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class DsbGsConfig:
    """IPF settings of the bridge sampler."""

    grid: TimeGrid
    rounds: int = 3
    batch_size: int = 128
    score_iterations: int = 2000
    correction_iterations: int = 2000
    distill_iterations: int = 3000
    distill_tolerance: float = 1e-3
    flow_step: float = 1e-4
    max_live_networks: int = 2
    t_min_fraction: float = 1e-3
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    progress: Optional[bool] = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("dsb_gs.rounds: at least one round", "dsb_gs.rounds")
        if self.max_live_networks < 1:
            raise ConfigError(
                "dsb_gs.max_live_networks: must be >= 1", "dsb_gs.max_live_networks"
            )

    @classmethod
    def from_defaults(cls, **overrides) -> "DsbGsConfig":
        """Short-horizon grid from ``[grid] bridge_*`` plus ``[dsb_gs]``."""
        values = dict(
            grid=TimeGrid.uniform(
                Defaults.get_float("grid", "bridge_horizon"),
                Defaults.get_int("grid", "bridge_steps"),
            ),
            rounds=Defaults.get_int("dsb_gs", "rounds"),
            batch_size=Defaults.get_int("ddgs", "batch_size"),
            score_iterations=Defaults.get_int("dsb_gs", "score_iterations"),
            correction_iterations=Defaults.get_int("dsb_gs", "correction_iterations"),
            distill_iterations=Defaults.get_int("dsb_gs", "distill_iterations"),
            distill_tolerance=Defaults.get_float("dsb_gs", "distill_tolerance"),
            flow_step=Defaults.get_float("dsb_gs", "flow_step"),
            max_live_networks=Defaults.get_int("dsb_gs", "max_live_networks"),
            t_min_fraction=Defaults.get_float("ddps", "t_min_fraction"),
            optimizer=AdamConfig.from_defaults(),
            network=NetworkConfig.from_defaults(),
        )
        values.update(overrides)
        return cls(**values)

    def correction_config(self) -> DdgsConfig:
        """The h-transform training settings used inside each round."""
        return DdgsConfig(
            grid=self.grid,
            batch_size=self.batch_size,
            iterations=self.correction_iterations,
            optimizer=self.optimizer,
            network=self.network,
            progress=self.progress,
        )


@dataclass(frozen=True)
class ComposedDrift:
    """Backward drift ``-z/2 + sum(parts)`` with the parts evaluated at the
    forward time ``T - tau``."""

    parts: Sequence[ParametricFunction] = ()

    def correction(self, t, z: Array) -> Optional[Array]:
        """Sum of the network parts; None when there are none."""
        total = None
        for part in self.parts:
            value = part.evaluate(t, z)
            total = value if total is None else total + value
        return total

    def __call__(self, t, z: Array) -> Array:
        correction = self.correction(t, z)
        base = -0.5 * np.asarray(z, dtype=float)
        return base if correction is None else base + correction

    def recorded(self, tape: Tape) -> Optional[Callable]:
        """Frozen copies of the parts on ``tape``, still differentiable with
        respect to their inputs."""
        if not self.parts:
            return None
        bound = [part.bind(tape, trainable=False) for part in self.parts]

        def base(t, z):
            total = bound[0](t, z)
            for part in bound[1:]:
                total = total + part(t, z)
            return total

        return base

    def plus(self, network: ParametricFunction) -> "ComposedDrift":
        return ComposedDrift(tuple(self.parts) + (network,))


class FlowReference:
    """``log Pi_0`` of the current backward process at the terminal states.

    The value comes from the probability flow driven by the marginal score;
    the gradient is the score itself at the smallest diffusion time."""

    def __init__(
        self,
        drift: ComposedDrift,
        score: Callable[[float, Array], Array],
        grid: TimeGrid,
        t_min: float,
        relative_step: float = 1e-4,
    ):
        self.drift = drift
        self.score = score
        self.grid = grid
        self.t_min = t_min
        self.relative_step = relative_step

    def value(self, z: Array) -> Array:
        def forward(t, x):
            correction = self.drift.correction(t, x)
            velocity = 0.5 * x + self.score(t, x)
            return velocity if correction is None else velocity - correction

        path, logdet = probability_flow(
            DriftFunction(forward, name="flow"),
            self.score,
            self.grid,
            z,
            relative_step=self.relative_step,
        )
        return standard_normal_log_density(path.terminal) + logdet

    def gradient(self, z: Array) -> Array:
        return self.score(self.t_min, z)


def _analytic_score(t, x: Array) -> Array:
    return -np.asarray(x, dtype=float)


@dataclass(frozen=True)
class GsIpfState:
    """IPF iterate ``n``: backward drift, its marginal score (None while the
    marginals are ``N(0, I)``) and the latest correction."""

    iteration: int
    drift: ComposedDrift
    config: DsbGsConfig
    score: Optional[ParametricFunction] = None
    correction: Optional[ParametricFunction] = None
    correction_trace: List[float] = field(default_factory=list)
    diagnostics: List[Dict[str, float]] = field(default_factory=list)

    def score_fn(self) -> Callable[[float, Array], Array]:
        """Marginal score ``(t, x)`` of the current backward process."""
        if self.score is None:
            return _analytic_score
        return self.score.evaluate


def _failure(state: GsIpfState, stage: str, error: Exception) -> IpfError:
    return IpfError(f"dsb-gs n={state.iteration} {stage}: {error}", state.iteration, stage)


def _proposal_noise(rng: np.random.Generator, grid: TimeGrid, n: int, d: int):
    z0 = rng.standard_normal((n, d))
    return z0, rng.standard_normal((grid.steps, n, d))


def fit_marginal_score(
    state: GsIpfState, target: TargetDensity, rng: np.random.Generator
) -> GsIpfState:
    """Fits the marginal score of the current backward process by
    single-step DSM; at n = 0 keeps the analytic ``-x``."""
    if state.iteration == 0:
        return replace(state, score=None)
    config = state.config
    grid = config.grid
    sigmas = StepCoefficients.from_grid(grid).sigma
    d = target.dimension

    def simulate(generator: np.random.Generator):
        z0, noise = _proposal_noise(generator, grid, config.batch_size, d)
        path = simulate_proposal(state.drift.correction, grid, z0, noise)
        return transitions_from_path(path, sigmas)

    try:
        network, history = fit_transition_score(
            simulate,
            d,
            config.score_iterations,
            rng,
            config.batch_size,
            config.network,
            config.optimizer,
            config.progress,
            initial=state.score.copy() if state.score is not None else None,
            description=f"dsb-gs score n={state.iteration}",
        )
    except (SimulationError, TrainingError) as error:
        raise _failure(state, "score", error) from error
    logger.info(
        "dsb-gs n=%d: score fitted, final loss %.6g",
        state.iteration,
        history[-1] if history else float("nan"),
    )
    return replace(state, score=network)


def fit_h_correction(
    state: GsIpfState, target: TargetDensity, rng: np.random.Generator
) -> GsIpfState:
    """Trains the reverse-KL correction against ``gamma / Pi_0``; at n = 0
    this is train_correction with the ``N(0, I)`` reference."""
    config = state.config
    reference: Optional[TerminalReference] = None
    if state.iteration > 0:
        reference = FlowReference(
            state.drift,
            state.score_fn(),
            config.grid,
            config.t_min_fraction * config.grid.horizon,
            config.flow_step,
        )
    recorder = state.drift.recorded if state.drift.parts else None
    try:
        network, history = train_correction(
            target,
            config.correction_config(),
            rng,
            reference,
            recorder,
            description="ddgs" if state.iteration == 0 else f"dsb-gs correction n={state.iteration}",
        )
    except (LossError, SimulationError, TrainingError, IntegrationError) as error:
        raise _failure(state, "correction", error) from error
    tail = history[-max(1, len(history) // 10):] if history else [float("nan")]
    logZ = -float(np.mean(tail))
    entry = {
        "iteration": float(state.iteration),
        "final_loss": history[-1] if history else float("nan"),
        "elbo_log_z": logZ,
    }
    logger.info("dsb-gs n=%d: correction fitted, ELBO log Z %.6g", state.iteration, logZ)
    return replace(
        state,
        correction=network,
        correction_trace=history,
        diagnostics=state.diagnostics + [entry],
    )


def distill(
    parts: Sequence[ParametricFunction],
    config: DsbGsConfig,
    rng: np.random.Generator,
    cloud: Array,
    times: Array,
) -> ParametricFunction:
    """Regresses one network onto the sum of ``parts`` over a sample cloud of
    states and forward times; warns when the relative L2 error stays above
    ``distill_tolerance``."""
    summed = ComposedDrift(parts)
    targets = summed.correction(times, cloud)
    scale = max(float(np.mean(np.sum(targets**2, axis=1))), 1e-12)
    network = parts[0].copy()
    batchSize = min(config.batch_size * 4, cloud.shape[0])

    def loss_and_gradient(theta: Array, iteration: int):
        chosen = rng.choice(cloud.shape[0], size=batchSize, replace=False)

        def record(tape: Tape, bound):
            residual = bound(times[chosen], cloud[chosen]) - targets[chosen]
            return tape.mean(tape.sum(tape.square(residual), axis=1)) * (1.0 / scale)

        return value_and_gradient(network, record, theta)

    trained, _ = fit(
        network,
        loss_and_gradient,
        config.distill_iterations,
        config.optimizer,
        config.progress,
        description="dsb-gs distill",
    )
    residual = trained.evaluate(times, cloud) - targets
    relative = float(np.sqrt(np.mean(np.sum(residual**2, axis=1)) / scale))
    if relative > config.distill_tolerance:
        logger.warning(
            "distilled drift relative L2 error %.3g exceeds tolerance %.3g",
            relative,
            config.distill_tolerance,
        )
    else:
        logger.info("distilled drift relative L2 error %.3g", relative)
    return trained


def update_drift(state: GsIpfState, rng: np.random.Generator) -> GsIpfState:
    """Adds the correction to the backward drift and moves to iterate n + 1.
    When more than ``max_live_networks`` parts would be live, the older parts
    are distilled into one network."""
    if state.correction is None:
        raise IpfError("no correction fitted", state.iteration, "update")
    drift = state.drift.plus(state.correction)
    config = state.config
    if len(drift.parts) > config.max_live_networks:
        keep = config.max_live_networks - 1
        older = list(drift.parts[: len(drift.parts) - keep])
        grid = config.grid
        d = older[0].architecture.dimension
        z0, noise = _proposal_noise(rng, grid, config.batch_size * 4, d)
        path = simulate_proposal(drift.correction, grid, z0, noise)
        coefficients = StepCoefficients.from_grid(grid)
        cloud = path.states[:-1].reshape(-1, d)
        times = np.repeat(coefficients.times, path.states.shape[1])
        merged = distill(older, config, rng, cloud, times)
        drift = ComposedDrift((merged,) + tuple(drift.parts[len(older) :]))
    return replace(
        state, iteration=state.iteration + 1, drift=drift, correction=None
    )


def run_dsb_gs(
    target: TargetDensity,
    config: DsbGsConfig,
    rng: np.random.Generator,
    on_round: Optional[Callable[[GsIpfState], None]] = None,
) -> GsIpfState:
    """``config.rounds`` rounds of fit_marginal_score, fit_h_correction and
    update_drift starting from the reference drift ``-z/2``; ``on_round``
    sees the state after each round."""
    state = GsIpfState(iteration=0, drift=ComposedDrift(), config=config)
    for _ in range(config.rounds):
        state = fit_marginal_score(state, target, rng)
        state = fit_h_correction(state, target, rng)
        state = update_drift(state, rng)
        if on_round is not None:
            on_round(state)
    return state


def sample_dsb_gs(
    state: GsIpfState, n: int, rng: np.random.Generator, return_path: bool = False
):
    """Draws from the backward process with the current drift."""
    grid = state.config.grid
    if not state.drift.parts:
        raise IpfError("no IPF round has completed", state.iteration, "sample")
    d = state.drift.parts[0].architecture.dimension
    z0, noise = _proposal_noise(rng, grid, n, d)
    path: Path = simulate_proposal(state.drift.correction, grid, z0, noise)
    return path if return_path else path.terminal
