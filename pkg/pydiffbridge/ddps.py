"""Amortized posterior sampling with a conditional score trained by denoising
score matching, plus guided sampling from an unconditional prior score.

Also hosts the single-step transition score matching used to fit marginal
scores of simulated Markov chains (shared with :mod:`ddgs` and
:mod:`dsb_gs`).
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

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
from .exceptions import ConfigError, UnsupportedError
from .helpers import as_batch, central_vjp
from .models import JointModel
from .sde_core import (
    Direction,
    DriftFunction,
    Path,
    TimeGrid,
    euler_maruyama,
    ou_moments,
    ou_transition_score,
)

logger = logging.getLogger(__name__)

Array = np.ndarray
ScoreFunction = Callable[..., Array]


@dataclass(frozen=True)
class DdpsConfig:
    """Training and sampling settings of the amortized posterior sampler."""

    grid: TimeGrid
    batch_size: int = 256
    iterations: int = 5000
    t_min_fraction: float = 1e-3
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    unconditional: bool = False
    progress: Optional[bool] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("ddps.batch_size: must be >= 1", "ddps.batch_size")
        if self.iterations < 0:
            raise ConfigError("ddps.iterations: must be >= 0", "ddps.iterations")
        if not 0 < self.t_min_fraction < 1:
            raise ConfigError(
                "ddps.t_min_fraction: must lie in (0, 1)", "ddps.t_min_fraction"
            )

    @classmethod
    def from_defaults(cls, **overrides) -> "DdpsConfig":
        """Reads ``[grid]``, ``[ddps]``, ``[network]`` and ``[optimizer]``."""
        values = dict(
            grid=TimeGrid.uniform(
                Defaults.get_float("grid", "horizon"), Defaults.get_int("grid", "steps")
            ),
            batch_size=Defaults.get_int("ddps", "batch_size"),
            iterations=Defaults.get_int("ddps", "iterations"),
            t_min_fraction=Defaults.get_float("ddps", "t_min_fraction"),
            optimizer=AdamConfig.from_defaults(),
            network=NetworkConfig.from_defaults(),
        )
        values.update(overrides)
        return cls(**values)

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    @property
    def t_min(self) -> float:
        """Smallest diffusion time used in the loss."""
        return self.t_min_fraction * self.grid.horizon


@dataclass(frozen=True)
class DsmBatch:
    """Clean states, observations, times and OU-corrupted states."""

    x0: Array
    t: Array
    xt: Array
    y: Optional[Array] = None

    @property
    def target(self) -> Array:
        """Conditional transition score at the corrupted states."""
        return ou_transition_score(self.x0, self.xt, self.t)


def sample_times(
    rng: np.random.Generator, n: int, horizon: float, t_min: float
) -> Array:
    """Uniform times on [0, horizon] with draws below ``t_min`` rejected and
    redrawn."""
    times = rng.uniform(0.0, horizon, size=n)
    rejected = times < t_min
    while np.any(rejected):
        times[rejected] = rng.uniform(0.0, horizon, size=int(rejected.sum()))
        rejected = times < t_min
    return times


def corrupt(x0: Array, t: Array, rng: np.random.Generator) -> Array:
    """Draws ``x_t ~ N(alpha(t) x_0, v(t) I)`` row-wise."""
    alpha, variance = ou_moments(t)
    noise = rng.standard_normal(x0.shape)
    return alpha[:, None] * x0 + np.sqrt(variance)[:, None] * noise


def sample_dsm_batch(
    model: JointModel, config: DdpsConfig, rng: np.random.Generator
) -> DsmBatch:
    """Simulates ``(x_0, y) ~ p(x, y)``, a time and a corrupted state."""
    x0, y = model.sample_joint(rng, config.batch_size)
    t = sample_times(rng, config.batch_size, config.horizon, config.t_min)
    xt = corrupt(x0, t, rng)
    return DsmBatch(x0=x0, t=t, xt=xt, y=None if config.unconditional else y)


def dsm_loss(score: ScoreFunction, batch: DsmBatch, horizon: float = 1.0) -> float:
    """``horizon * mean ||s(t, x_t[, y]) - grad log p_{t|0}(x_t | x_0)||^2``.

    ``score`` is any callable ``(t, x[, y]) -> (n, d)``."""
    if batch.y is None:
        predicted = score(batch.t, batch.xt)
    else:
        predicted = score(batch.t, batch.xt, batch.y)
    residual = np.asarray(predicted) - batch.target
    return float(horizon * np.mean(np.sum(residual**2, axis=1)))


def record_dsm_loss(
    tape: Tape, score: BoundFunction, batch: DsmBatch, horizon: float = 1.0
) -> Node:
    """dsm_loss recorded on ``tape`` for a bound network."""
    predicted = score(batch.t, batch.xt, batch.y)
    residual = predicted - batch.target
    return tape.mean(tape.sum(tape.square(residual), axis=1)) * horizon


@dataclass
class TrainedPosteriorSampler:
    """A trained score ``s(t, x[, y])`` with its training settings."""

    network: ParametricFunction
    config: DdpsConfig
    loss_trace: List[float]
    conditional: bool = True

    def score(self, t, x: Array, y: Optional[Array] = None) -> Array:
        if self.conditional:
            return self.network.evaluate(t, as_batch(x), y)
        return self.network.evaluate(t, as_batch(x))


def train_ddps(
    model: JointModel, config: DdpsConfig, rng: np.random.Generator
) -> TrainedPosteriorSampler:
    """Trains ``s(t, x, y)`` by DSM on simulated pairs.

    Parameters:
    model: joint model supporting simulation.
    config: training settings; ``unconditional`` trains a prior score
    ``s(t, x)`` for guided sampling instead.
    rng: the only source of randomness.

    Returns the TrainedPosteriorSampler.
    """
    conditional = not config.unconditional
    architecture = Architecture(
        model.latent_dim, model.obs_dim if conditional else 0, config.network
    )
    network = ParametricFunction.initialize(architecture, rng)
    logger.info(
        "training %s score on %s: %d parameters, %d iterations",
        "conditional" if conditional else "prior",
        model.name,
        network.num_parameters,
        config.iterations,
    )

    def loss_and_gradient(theta: Array, iteration: int):
        batch = sample_dsm_batch(model, config, rng)
        return value_and_gradient(
            network,
            lambda tape, bound: record_dsm_loss(tape, bound, batch, config.horizon),
            theta,
        )

    trained, history = fit(
        network,
        loss_and_gradient,
        config.iterations,
        config.optimizer,
        config.progress,
        description="ddps",
    )
    return TrainedPosteriorSampler(trained, config, history, conditional)


def reverse_sample(
    score: ScoreFunction,
    grid: TimeGrid,
    dimension: int,
    n: int,
    rng: np.random.Generator,
    y: Optional[Array] = None,
) -> Path:
    """Simulates ``dZ = (Z/2 + score(T - tau, Z[, y])) dtau + dW`` from
    ``Z_0 ~ N(0, I)`` with Euler-Maruyama on ``grid``."""
    horizon = grid.horizon
    z0 = rng.standard_normal((n, dimension))
    if y is None:
        drift = DriftFunction(
            lambda tau, z: 0.5 * z + score(horizon - tau, z), name="reversal"
        )
    else:
        drift = DriftFunction(
            lambda tau, z, obs: 0.5 * z + score(horizon - tau, z, obs),
            conditional=True,
            name="reversal",
        )
    return euler_maruyama(drift, grid, z0, rng, y=y, direction=Direction.BACKWARD)


def sample_posterior(
    sampler: TrainedPosteriorSampler,
    y: Array,
    n: int,
    rng: np.random.Generator,
    return_path: bool = False,
):
    """Approximate draws from ``p(x | y)``; the whole backward Path when
    ``return_path``."""
    if not sampler.conditional:
        raise UnsupportedError("prior-only sampler: use sample_guided")
    y = np.asarray(y, dtype=float).reshape(-1)
    path = reverse_sample(
        sampler.score, sampler.config.grid, sampler.network.architecture.dimension, n, rng, y
    )
    return path if return_path else path.terminal


def guided_score(
    score: Callable[[float, Array], Array],
    model: JointModel,
    t,
    x: Array,
    y: Array,
    mode: str = "denoiser",
) -> Array:
    """Conditional score from an unconditional one plus a guidance term.

    Parameters:
    score: prior score ``(t, x) -> (n, d)``.
    model: joint model providing the likelihood.
    t: diffusion time(s), > 0.
    x: states, (d,) or (n, d).
    y: observation.
    mode: ``denoiser`` differentiates ``log g(y | x0_hat(t, x))`` with the
    denoiser ``x0_hat = (x + v(t) s) / alpha(t)``; ``exact`` uses the model's
    closed-form guidance term.

    Returns the guided score, (n, d).
    """
    batch = as_batch(x)
    prior = np.asarray(score(t, batch))
    if mode == "exact":
        if model.analytic_guidance_score is None:
            raise UnsupportedError(f"{model.name}: no closed-form guidance")
        return prior + model.analytic_guidance_score(t, batch, y)
    if mode != "denoiser":
        raise UnsupportedError(f"unknown guidance mode {mode!r}")
    if model.log_likelihood is None:
        raise UnsupportedError(f"{model.name}: guidance needs a log-likelihood")
    alpha, variance = ou_moments(t)
    alpha = np.reshape(alpha, (-1, 1)) if np.ndim(alpha) else alpha
    variance = np.reshape(variance, (-1, 1)) if np.ndim(variance) else variance

    def denoise(z: Array) -> Array:
        return (z + variance * np.asarray(score(t, z))) / alpha

    if model.grad_log_likelihood is not None:
        cotangent = model.grad_log_likelihood(denoise(batch), y)
        return prior + central_vjp(denoise, batch, cotangent)
    ones = np.ones((batch.shape[0], 1))
    return prior + central_vjp(
        lambda z: model.log_likelihood(denoise(z), y)[:, None], batch, ones
    )


def sample_guided(
    sampler: TrainedPosteriorSampler,
    model: JointModel,
    y: Array,
    n: int,
    rng: np.random.Generator,
    mode: str = "denoiser",
) -> Array:
    """Posterior draws from a prior-score sampler with likelihood guidance."""
    y = np.asarray(y, dtype=float).reshape(-1)
    path = reverse_sample(
        lambda t, z: guided_score(sampler.score, model, t, z, y, mode),
        sampler.config.grid,
        sampler.network.architecture.dimension,
        n,
        rng,
    )
    return path.terminal


@dataclass(frozen=True)
class TransitionBatch:
    """Single Gaussian steps of a simulated chain: the state each step
    produced, the forward diffusion time at which that state lives, and the
    score ``-xi / sigma`` of the step's transition density at it."""

    times: Array
    states: Array
    targets: Array

    def take(self, index: Array) -> "TransitionBatch":
        return TransitionBatch(self.times[index], self.states[index], self.targets[index])


def transitions_from_path(path: Path, sigmas: Array) -> TransitionBatch:
    """Flattens a backward Path with recorded noise into transitions.

    ``sigmas`` holds the per-step noise scales; the state reached by step k
    lives at forward time ``T - tau_{k+1}``."""
    if path.noise is None:
        raise UnsupportedError("path has no noise record")
    steps, n, d = path.noise.shape
    sigmas = np.asarray(sigmas, dtype=float).reshape(steps, 1, 1)
    forwardTimes = path.grid.reversed_times()[1:]
    return TransitionBatch(
        times=np.repeat(forwardTimes, n),
        states=path.states[1:].reshape(steps * n, d),
        targets=(-path.noise / sigmas).reshape(steps * n, d),
    )


def transition_dsm_loss(score: ScoreFunction, batch: TransitionBatch) -> float:
    """``mean ||s(t, z) - target||^2`` over transitions."""
    residual = np.asarray(score(batch.times, batch.states)) - batch.targets
    return float(np.mean(np.sum(residual**2, axis=1)))


def record_transition_dsm_loss(
    tape: Tape, score: BoundFunction, batch: TransitionBatch
) -> Node:
    """transition_dsm_loss recorded on ``tape``."""
    residual = score(batch.times, batch.states) - batch.targets
    return tape.mean(tape.sum(tape.square(residual), axis=1))


def fit_transition_score(
    simulate: Callable[[np.random.Generator], TransitionBatch],
    dimension: int,
    iterations: int,
    rng: np.random.Generator,
    batch_size: int,
    network: Optional[NetworkConfig] = None,
    optimizer: Optional[AdamConfig] = None,
    progress: Optional[bool] = None,
    initial: Optional[ParametricFunction] = None,
    description: str = "marginal score",
):
    """Fits the marginal score of a simulated chain by single-step DSM.

    Parameters:
    simulate: draws a fresh TransitionBatch of chain steps.
    dimension: state dimension.
    iterations: optimizer steps.
    rng: randomness for initialization and minibatch selection.
    batch_size: transitions per gradient step.
    initial: warm start; a fresh network otherwise.

    Returns the trained network and its loss history.
    """
    if initial is None:
        architecture = Architecture(dimension, 0, network or NetworkConfig.from_defaults())
        initial = ParametricFunction.initialize(architecture, rng)

    def loss_and_gradient(theta: Array, iteration: int):
        pool = simulate(rng)
        chosen = rng.choice(pool.times.size, size=min(batch_size, pool.times.size), replace=False)
        batch = pool.take(chosen)
        return value_and_gradient(
            initial,
            lambda tape, bound: record_transition_dsm_loss(tape, bound, batch),
            theta,
        )

    return fit(initial, loss_and_gradient, iterations, optimizer, progress, description)
