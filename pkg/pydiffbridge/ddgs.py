"""Sampling an unnormalized density with a learned Doob h-transform.

The proposal runs in backward time ``tau`` from ``Z_0 ~ N(0, I)`` with drift
``-z/2 + u(T - tau, z)``. Each step is the exact OU step with the correction
held constant over the step::

    z_{k+1} = a_k z_k + b_k u(T - tau_k, z_k) + s_k xi_k
    a_k = exp(-g_k / 2),  b_k = 2 (1 - a_k),  s_k^2 = 1 - exp(-g_k)

so the uncorrected proposal is the exact discrete OU and the reference
kernels ``N(z_k; a_k z_{k+1}, s_k^2)`` match it, making path weights exact
when ``u = 0``.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Tuple

import numpy as np

from .approximator import (
    AdamConfig,
    Architecture,
    BoundFunction,
    NetworkConfig,
    Node,
    ParametricFunction,
    Tape,
    fit,
    value_and_gradient,
)
from .config import Defaults
from .ddps import fit_transition_score, transitions_from_path
from .exceptions import ConfigError, LossError, SimulationError
from .helpers import (
    LOG_2PI,
    check_finite,
    isotropic_normal_log_density,
    log_mean_exp,
    standard_normal_log_density,
)
from .models import TargetDensity
from .sde_core import Direction, DriftFunction, Path, TimeGrid, probability_flow

logger = logging.getLogger(__name__)

Array = np.ndarray
Correction = Callable[[float, Array], Array]
RecordedCorrection = Callable[[float, Node], Node]
# (n,) log importance weights, one per proposal path
PathWeights = Array


@dataclass(frozen=True)
class DdgsConfig:
    """Training settings of the h-transform sampler."""

    grid: TimeGrid
    batch_size: int = 128
    iterations: int = 2000
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    progress: Optional[bool] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("ddgs.batch_size: must be >= 1", "ddgs.batch_size")
        if self.iterations < 0:
            raise ConfigError("ddgs.iterations: must be >= 0", "ddgs.iterations")

    @classmethod
    def from_defaults(cls, **overrides) -> "DdgsConfig":
        """Reads ``[grid]``, ``[ddgs]``, ``[network]`` and ``[optimizer]``."""
        values = dict(
            grid=TimeGrid.uniform(
                Defaults.get_float("grid", "horizon"), Defaults.get_int("grid", "steps")
            ),
            batch_size=Defaults.get_int("ddgs", "batch_size"),
            iterations=Defaults.get_int("ddgs", "iterations"),
            optimizer=AdamConfig.from_defaults(),
            network=NetworkConfig.from_defaults(),
        )
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class StepCoefficients:
    """Per-step ``a_k``, ``b_k``, ``s_k`` of the backward-time scheme and the
    forward time ``T - tau_k`` at which the drift is evaluated."""

    alpha: Array
    beta: Array
    sigma: Array
    times: Array
    tau: Array

    @classmethod
    def from_grid(cls, grid: TimeGrid) -> "StepCoefficients":
        tau = grid.horizon - grid.times[::-1]
        gammas = np.diff(tau)
        alpha = np.exp(-0.5 * gammas)
        return cls(
            alpha=alpha,
            beta=2.0 * (1.0 - alpha),
            sigma=np.sqrt(-np.expm1(-gammas)),
            times=grid.horizon - tau[:-1],
            tau=tau,
        )

    @property
    def backward_grid(self) -> TimeGrid:
        return TimeGrid(self.tau)


class TerminalReference(Protocol):
    """Log-density the proposal's terminal law is compared against."""

    def value(self, z: Array) -> Array:
        ...

    def gradient(self, z: Array) -> Array:
        ...


class StandardNormalReference:
    """``N(0, I)``, the terminal law of the uncorrected proposal."""

    def value(self, z: Array) -> Array:
        return standard_normal_log_density(z)

    def gradient(self, z: Array) -> Array:
        return -z


def simulate_proposal(
    correction: Optional[Correction],
    grid: TimeGrid,
    z0: Array,
    noise: Array,
) -> Path:
    """Runs the backward-time scheme; the Path is indexed by tau."""
    coefficients = StepCoefficients.from_grid(grid)
    state = np.asarray(z0, dtype=float)
    states = np.empty((grid.steps + 1,) + state.shape)
    states[0] = state
    for k in range(grid.steps):
        step = coefficients.alpha[k] * state
        if correction is not None:
            step = step + coefficients.beta[k] * correction(coefficients.times[k], state)
        state = check_finite(
            step + coefficients.sigma[k] * noise[k],
            SimulationError,
            f"non-finite proposal state at step {k + 1}",
            step=k + 1,
        )
        states[k + 1] = state
    return Path(
        grid=coefficients.backward_grid,
        states=states,
        direction=Direction.BACKWARD,
        noise=noise,
    )


def _terminal_node(
    tape: Tape,
    terminal: Node,
    target: TargetDensity,
    reference: TerminalReference,
) -> Node:
    zK = terminal.value
    logGamma = target.log_gamma(zK)
    bad = np.flatnonzero(~np.isfinite(logGamma))
    if bad.size:
        raise LossError(
            f"non-finite target log-density on path {bad[0]}", path=int(bad[0])
        )
    logRef = reference.value(zK)
    bad = np.flatnonzero(~np.isfinite(logRef))
    if bad.size:
        raise LossError(
            f"non-finite reference log-density on path {bad[0]}", path=int(bad[0])
        )
    slope = target.grad_log_gamma(zK) - reference.gradient(zK)
    return tape.custom(logGamma - logRef, [terminal], [lambda g: g[:, None] * slope])


def controlled_kl_loss(
    tape: Tape,
    control: BoundFunction,
    target: TargetDensity,
    grid: TimeGrid,
    z0: Array,
    noise: Array,
    reference: Optional[TerminalReference] = None,
    base: Optional[Callable[[Tape], RecordedCorrection]] = None,
) -> Node:
    """Discrete reverse KL of the controlled proposal, recorded on ``tape``.

    Parameters:
    tape: tape to record on.
    control: the trainable correction ``u``.
    target: unnormalized target ``gamma``.
    grid: forward time grid.
    z0: initial states, (n, d).
    noise: standard normal increments, (K, n, d); constants of the tape.
    reference: terminal log-density of the uncontrolled process;
    ``N(0, I)`` when omitted.
    base: binds an extra frozen drift correction on top of ``-z/2`` to the
    tape; the bound correction is differentiable in its input.

    Returns the scalar mean over paths of
    ``sum_k ||b_k u_k||^2 / (2 s_k^2) - log gamma(z_K) + log ref(z_K)``.
    """
    reference = reference or StandardNormalReference()
    coefficients = StepCoefficients.from_grid(grid)
    frozen = None if base is None else base(tape)
    state = tape.constant(z0)
    energy = None
    for k in range(grid.steps):
        t = coefficients.times[k]
        u = control(t, state)
        drive = u if frozen is None else frozen(t, state) + u
        state = (
            state * coefficients.alpha[k]
            + drive * coefficients.beta[k]
            + coefficients.sigma[k] * noise[k]
        )
        stepEnergy = tape.sum(tape.square(u), axis=1) * (
            coefficients.beta[k] ** 2 / (2.0 * coefficients.sigma[k] ** 2)
        )
        energy = stepEnergy if energy is None else energy + stepEnergy
    terminal = _terminal_node(tape, state, target, reference)
    perPath = terminal * -1.0 if energy is None else energy - terminal
    return tape.mean(perPath)


def reverse_kl_loss(
    correction: Optional[Correction],
    target: TargetDensity,
    grid: TimeGrid,
    z0: Array,
    noise: Array,
    reference: Optional[TerminalReference] = None,
) -> float:
    """controlled_kl_loss evaluated without a tape, for any correction
    callable ``(t, z) -> (n, d)``."""
    reference = reference or StandardNormalReference()
    coefficients = StepCoefficients.from_grid(grid)
    path = simulate_proposal(correction, grid, z0, noise)
    energy = np.zeros(path.states.shape[1])
    if correction is not None:
        for k in range(grid.steps):
            u = correction(coefficients.times[k], path.states[k])
            energy += np.sum(u**2, axis=1) * (
                coefficients.beta[k] ** 2 / (2.0 * coefficients.sigma[k] ** 2)
            )
    zK = path.terminal
    return float(np.mean(energy - target.log_gamma(zK) + reference.value(zK)))


def train_correction(
    target: TargetDensity,
    config: DdgsConfig,
    rng: np.random.Generator,
    reference: Optional[TerminalReference] = None,
    base: Optional[Callable[[Tape], RecordedCorrection]] = None,
    description: str = "ddgs",
) -> Tuple[ParametricFunction, List[float]]:
    """Minimizes controlled_kl_loss with pathwise gradients.

    The network is initialized from ``rng`` first; every iteration then draws
    ``z_0`` and the increments from ``rng``."""
    architecture = Architecture(target.dimension, 0, config.network)
    network = ParametricFunction.initialize(architecture, rng)
    steps = config.grid.steps
    n = config.batch_size

    def loss_and_gradient(theta: Array, iteration: int):
        z0 = rng.standard_normal((n, target.dimension))
        noise = rng.standard_normal((steps, n, target.dimension))
        return value_and_gradient(
            network,
            lambda tape, bound: controlled_kl_loss(
                tape, bound, target, config.grid, z0, noise, reference, base
            ),
            theta,
        )

    return fit(
        network,
        loss_and_gradient,
        config.iterations,
        config.optimizer,
        config.progress,
        description=description,
    )


@dataclass
class HTransformSampler:
    """A trained correction ``u(t, z)`` approximating ``grad log h_t``."""

    network: ParametricFunction
    target: TargetDensity
    config: DdgsConfig
    loss_trace: List[float]

    def correction(self, t, z: Array) -> Array:
        return self.network.evaluate(t, z)


def train_ddgs(
    target: TargetDensity, config: DdgsConfig, rng: np.random.Generator
) -> HTransformSampler:
    """Trains the h-transform correction against ``N(0, I)``-started
    reference paths."""
    logger.info(
        "training h-transform for %s (d=%d), %d iterations",
        target.name,
        target.dimension,
        config.iterations,
    )
    network, history = train_correction(target, config, rng)
    return HTransformSampler(network, target, config, history)


def path_log_weights(
    path: Path, target: TargetDensity, grid: TimeGrid
) -> PathWeights:
    """Log importance weights of proposal paths against the target path law
    built from ``gamma`` and the exact OU kernels, from the noise record."""
    coefficients = StepCoefficients.from_grid(grid)
    states = path.states
    d = path.dimension
    logWeight = target.log_gamma(states[-1]) - standard_normal_log_density(states[0])
    for k in range(grid.steps):
        variance = coefficients.sigma[k] ** 2
        reverseKernel = isotropic_normal_log_density(
            states[k], coefficients.alpha[k] * states[k + 1], variance
        )
        proposalKernel = -0.5 * np.sum(path.noise[k] ** 2, axis=1) - 0.5 * d * (
            LOG_2PI + np.log(variance)
        )
        logWeight = logWeight + reverseKernel - proposalKernel
    bad = np.flatnonzero(~np.isfinite(logWeight))
    if bad.size:
        raise LossError(f"non-finite log weight on path {bad[0]}", path=int(bad[0]))
    return logWeight


def sample_ddgs(
    sampler: HTransformSampler,
    n: int,
    rng: np.random.Generator,
    return_path: bool = False,
):
    """Simulates the proposal; returns ``(draws, log_weights)`` or
    ``(path, log_weights)``."""
    d = sampler.target.dimension
    grid = sampler.config.grid
    z0 = rng.standard_normal((n, d))
    noise = rng.standard_normal((grid.steps, n, d))
    path = simulate_proposal(sampler.correction, grid, z0, noise)
    logWeights = path_log_weights(path, sampler.target, grid)
    return (path if return_path else path.terminal), logWeights


@dataclass(frozen=True)
class LogZEstimate:
    """Importance-sampling estimate of ``log Z``."""

    log_z: float
    standard_error: float
    ess: float
    mean_log_weight: float

    @property
    def z(self) -> float:
        return float(np.exp(self.log_z))

    @property
    def z_standard_error(self) -> float:
        """Standard error of the weight mean, in Z units."""
        return self.z * self.standard_error


def log_z_estimate(log_weights: Array) -> LogZEstimate:
    """Log of the weight mean with its relative standard error and the
    effective sample size ``(sum w)^2 / sum w^2``."""
    logWeights = np.asarray(log_weights, dtype=float)
    n = logWeights.size
    scaled = np.exp(logWeights - np.max(logWeights))
    relative = float(np.std(scaled, ddof=1) / (np.sqrt(n) * np.mean(scaled))) if n > 1 else 0.0
    return LogZEstimate(
        log_z=float(log_mean_exp(logWeights)),
        standard_error=relative,
        ess=float(scaled.sum() ** 2 / np.sum(scaled**2)),
        mean_log_weight=float(np.mean(logWeights)),
    )


def flow_log_z(
    sampler: HTransformSampler,
    score: Callable[[float, Array], Array],
    points: Array,
    divergence: Optional[Callable[[float, Array], Array]] = None,
) -> Tuple[float, Array]:
    """Pointwise ``log gamma(x) - log q_0(x)`` with ``q_0`` the proposal's
    terminal density obtained from the probability flow.

    Parameters:
    sampler: trained sampler.
    score: marginal score of the proposal in forward time, ``(t, x)``.
    points: evaluation points, (n, d).
    divergence: exact divergence of the flow field, when available.

    Returns the mean estimate and the pointwise estimates.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    drift = DriftFunction(
        lambda t, x: 0.5 * x - sampler.correction(t, x) + score(t, x), name="proposal"
    )
    path, logdet = probability_flow(
        drift, score, sampler.config.grid, points, divergence=divergence
    )
    logQ = standard_normal_log_density(path.terminal) + logdet
    pointwise = sampler.target.log_gamma(points) - logQ
    return float(np.mean(pointwise)), pointwise


def fit_proposal_score(
    sampler: HTransformSampler,
    rng: np.random.Generator,
    iterations: int,
    batch_size: Optional[int] = None,
) -> ParametricFunction:
    """DSM fit of the proposal's marginal score from single proposal steps."""
    grid = sampler.config.grid
    coefficients = StepCoefficients.from_grid(grid)
    d = sampler.target.dimension
    paths = sampler.config.batch_size

    def simulate(generator: np.random.Generator):
        z0 = generator.standard_normal((paths, d))
        noise = generator.standard_normal((grid.steps, paths, d))
        path = simulate_proposal(sampler.correction, grid, z0, noise)
        return transitions_from_path(path, coefficients.sigma)

    network, _ = fit_transition_score(
        simulate,
        d,
        iterations,
        rng,
        batch_size or sampler.config.batch_size,
        sampler.config.network,
        sampler.config.optimizer,
        sampler.config.progress,
        description="proposal score",
    )
    return network
