"""Target distributions and Bayesian joint models, each bundled with whatever
analytic ground truth exists for it."""
import functools
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .config import Defaults
from .exceptions import ConfigError, DomainError, ModelError, UnsupportedError
from .helpers import LOG_2PI, as_batch, as_times

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class GaussianParams:
    """Mean and covariance of a multivariate normal ``N(mean, covariance)``."""

    mean: Array
    covariance: Array

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if covariance.shape != (mean.size, mean.size):
            raise ModelError(
                f"covariance shape {covariance.shape} does not match mean of size "
                f"{mean.size}"
            )
        if not np.allclose(covariance, covariance.T, atol=1e-12):
            raise ModelError("covariance must be symmetric")
        try:
            np.linalg.cholesky(covariance)
        except np.linalg.LinAlgError as error:
            raise ModelError("covariance must be positive definite") from error
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", covariance)

    @property
    def dimension(self) -> int:
        """Dimension of the distribution."""
        return self.mean.size

    def diffused(self, t: float) -> "GaussianParams":
        """Law of ``X_t`` under the OU noising process started from self."""
        alpha = np.exp(-0.5 * t)
        variance = -np.expm1(-t)
        return GaussianParams(
            alpha * self.mean,
            alpha**2 * self.covariance + variance * np.eye(self.dimension),
        )

    def log_density(self, x: Array) -> Array:
        """Row-wise ``log N(x; mean, covariance)``."""
        batch = as_batch(x)
        cholesky = np.linalg.cholesky(self.covariance)
        centered = np.linalg.solve(cholesky, (batch - self.mean).T)
        logDet = 2.0 * np.sum(np.log(np.diag(cholesky)))
        return -0.5 * np.sum(centered**2, axis=0) - 0.5 * (
            self.dimension * LOG_2PI + logDet
        )

    def score(self, x: Array) -> Array:
        """Row-wise ``grad log N(x; mean, covariance)``."""
        batch = as_batch(x)
        return -np.linalg.solve(self.covariance, (batch - self.mean).T).T

    def sample(self, rng: np.random.Generator, n: int) -> Array:
        """Draws ``n`` samples."""
        cholesky = np.linalg.cholesky(self.covariance)
        return self.mean + rng.standard_normal((n, self.dimension)) @ cholesky.T


@dataclass(frozen=True)
class TargetDensity:
    """An unnormalized density ``gamma`` with ``p = gamma / Z``."""

    dimension: int
    log_gamma: Callable[[Array], Array]
    grad_log_gamma: Callable[[Array], Array]
    known_log_Z: Optional[float] = None
    analytic_score_at_t: Optional[Callable[[float, Array], Array]] = None
    analytic_log_density_at_t: Optional[Callable[[float, Array], Array]] = None
    sampler: Optional[Callable[[np.random.Generator, int], Array]] = None
    mean: Optional[Array] = None
    covariance: Optional[Array] = None
    marginal_cdf: Optional[Callable[[int, Array], Array]] = None
    modes: Optional[Array] = None
    name: str = field(default="target", compare=False)

    def log_density(self, x: Array) -> Array:
        """Normalized log-density; needs ``known_log_Z``."""
        if self.known_log_Z is None:
            raise UnsupportedError(f"{self.name}: normalizing constant is unknown")
        return self.log_gamma(x) - self.known_log_Z

    def sample(self, rng: np.random.Generator, n: int) -> Array:
        """Exact samples, where an exact sampler exists."""
        if self.sampler is None:
            raise UnsupportedError(f"{self.name}: no exact sampler")
        return self.sampler(rng, n)

    def scaled(self, factor: float) -> "TargetDensity":
        """The same target with ``gamma`` multiplied by ``factor``."""
        if factor <= 0:
            raise DomainError(f"scale factor must be positive, got {factor}")
        logFactor = float(np.log(factor))
        logGamma = self.log_gamma
        return TargetDensity(
            dimension=self.dimension,
            log_gamma=lambda x: logGamma(x) + logFactor,
            grad_log_gamma=self.grad_log_gamma,
            known_log_Z=None
            if self.known_log_Z is None
            else self.known_log_Z + logFactor,
            analytic_score_at_t=self.analytic_score_at_t,
            analytic_log_density_at_t=self.analytic_log_density_at_t,
            sampler=self.sampler,
            mean=self.mean,
            covariance=self.covariance,
            marginal_cdf=self.marginal_cdf,
            modes=self.modes,
            name=self.name,
        )


def make_gaussian_target(params: GaussianParams, scale: float = 1.0) -> TargetDensity:
    """Gaussian target ``gamma(x) = scale * N(x; mean, cov)``.

    Parameters:
    params: mean and covariance.
    scale: positive constant, so that ``log Z = log scale``.

    Returns a TargetDensity with analytic diffused score
    ``p_t = N(alpha(t) mean, alpha(t)^2 cov + v(t) I)``.
    """
    if scale <= 0:
        raise ModelError(f"scale must be positive, got {scale}")
    logScale = float(np.log(scale))
    stds = np.sqrt(np.diag(params.covariance))

    return TargetDensity(
        dimension=params.dimension,
        log_gamma=lambda x: logScale + params.log_density(x),
        grad_log_gamma=params.score,
        known_log_Z=logScale,
        analytic_score_at_t=lambda t, x: params.diffused(t).score(x),
        analytic_log_density_at_t=lambda t, x: params.diffused(t).log_density(x),
        sampler=params.sample,
        mean=params.mean,
        covariance=params.covariance,
        marginal_cdf=lambda i, x: norm.cdf(x, loc=params.mean[i], scale=stds[i]),
        modes=params.mean[None, :],
        name="gaussian",
    )


def make_standard_normal(dimension: int = 1) -> TargetDensity:
    """The stationary law ``N(0, I)`` of the reference process."""
    target = make_gaussian_target(
        GaussianParams(np.zeros(dimension), np.eye(dimension)), 1.0
    )
    return _renamed(target, "standard_normal")


def _renamed(target: TargetDensity, name: str) -> TargetDensity:
    object.__setattr__(target, "name", name)
    return target


def _mixture_log_terms(
    logWeights: Array, components: Sequence[GaussianParams], x: Array
) -> Array:
    return np.stack(
        [lw + comp.log_density(x) for lw, comp in zip(logWeights, components)],
        axis=1,
    )


def _mixture_score(
    logWeights: Array, components: Sequence[GaussianParams], x: Array
) -> Array:
    terms = _mixture_log_terms(logWeights, components, x)
    responsibilities = np.exp(terms - logsumexp(terms, axis=1, keepdims=True))
    scores = np.stack([comp.score(x) for comp in components], axis=1)
    return np.sum(responsibilities[:, :, None] * scores, axis=1)


def make_gaussian_mixture(
    weights: Sequence[float], components: Sequence[GaussianParams]
) -> TargetDensity:
    """Gaussian mixture ``gamma(x) = sum_i w_i N(x; mu_i, Sigma_i)``, Z = 1.

    Parameters:
    weights: positive weights summing to 1.
    components: component parameters, all of the same dimension.

    Returns a TargetDensity whose diffused score is the responsibility-weighted
    combination of diffused component scores.
    """
    components = list(components)
    if not components:
        raise ModelError("a mixture needs at least one component")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(components),):
        raise ModelError("one weight per component is required")
    if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-10:
        raise ModelError("mixture weights must be positive and sum to 1")
    dimension = components[0].dimension
    if any(comp.dimension != dimension for comp in components):
        raise ModelError("mixture components must share a dimension")
    logWeights = np.log(weights)

    def log_gamma(x: Array) -> Array:
        return logsumexp(_mixture_log_terms(logWeights, components, x), axis=1)

    def score_at_t(t: float, x: Array) -> Array:
        return _mixture_score(logWeights, [c.diffused(t) for c in components], x)

    def log_density_at_t(t: float, x: Array) -> Array:
        diffused = [c.diffused(t) for c in components]
        return logsumexp(_mixture_log_terms(logWeights, diffused, x), axis=1)

    def sampler(rng: np.random.Generator, n: int) -> Array:
        labels = rng.choice(len(components), size=n, p=weights)
        draws = np.empty((n, dimension))
        for i, comp in enumerate(components):
            mask = labels == i
            draws[mask] = comp.sample(rng, int(mask.sum()))
        return draws

    means = np.stack([comp.mean for comp in components])
    mean = weights @ means
    covariance = sum(
        w * (comp.covariance + np.outer(comp.mean - mean, comp.mean - mean))
        for w, comp in zip(weights, components)
    )

    def marginal_cdf(i: int, x: Array) -> Array:
        return sum(
            w * norm.cdf(x, loc=comp.mean[i], scale=np.sqrt(comp.covariance[i, i]))
            for w, comp in zip(weights, components)
        )

    return TargetDensity(
        dimension=dimension,
        log_gamma=log_gamma,
        grad_log_gamma=lambda x: _mixture_score(logWeights, components, x),
        known_log_Z=0.0,
        analytic_score_at_t=score_at_t,
        analytic_log_density_at_t=log_density_at_t,
        sampler=sampler,
        mean=mean,
        covariance=covariance,
        marginal_cdf=marginal_cdf,
        modes=means,
        name="mixture",
    )


def make_ring_mixture(
    modes: int = 2, radius: float = 2.0, variance: float = 0.25
) -> TargetDensity:
    """Equally weighted 2-d mixture with ``modes`` components on a circle; the
    first mode sits at ``(radius, 0)``."""
    if not 2 <= modes <= 8:
        raise ModelError(f"ring mixtures have 2 to 8 modes, got {modes}")
    angles = 2.0 * np.pi * np.arange(modes) / modes
    components = [
        GaussianParams(
            radius * np.array([np.cos(a), np.sin(a)]), variance * np.eye(2)
        )
        for a in angles
    ]
    return _renamed(
        make_gaussian_mixture(np.full(modes, 1.0 / modes), components), "ring_mixture"
    )


def make_funnel(scale: float = 3.0) -> TargetDensity:
    """2-d Neal funnel: ``x_1 ~ N(0, scale^2)``, ``x_2 | x_1 ~ N(0, exp(x_1))``.
    No analytic diffused score; moments are known."""

    def log_gamma(x: Array) -> Array:
        batch = as_batch(x)
        x1, x2 = batch[:, 0], batch[:, 1]
        return (
            -0.5 * x1**2 / scale**2
            - np.log(scale)
            - 0.5 * x2**2 * np.exp(-x1)
            - 0.5 * x1
            - LOG_2PI
        )

    def grad_log_gamma(x: Array) -> Array:
        batch = as_batch(x)
        x1, x2 = batch[:, 0], batch[:, 1]
        return np.stack(
            [
                -x1 / scale**2 + 0.5 * x2**2 * np.exp(-x1) - 0.5,
                -x2 * np.exp(-x1),
            ],
            axis=1,
        )

    def sampler(rng: np.random.Generator, n: int) -> Array:
        x1 = scale * rng.standard_normal(n)
        x2 = np.exp(0.5 * x1) * rng.standard_normal(n)
        return np.stack([x1, x2], axis=1)

    return TargetDensity(
        dimension=2,
        log_gamma=log_gamma,
        grad_log_gamma=grad_log_gamma,
        known_log_Z=0.0,
        sampler=sampler,
        mean=np.zeros(2),
        covariance=np.diag([scale**2, np.exp(0.5 * scale**2)]),
        marginal_cdf=lambda i, x: norm.cdf(x, scale=scale) if i == 0 else None,
        name="funnel",
    )


@dataclass(frozen=True)
class JointModel:
    """Prior ``mu(x)`` and likelihood ``g(y | x)`` of a Bayesian model."""

    latent_dim: int
    obs_dim: int
    sample_prior: Callable[[np.random.Generator, int], Array]
    simulate_likelihood: Callable[[Array, np.random.Generator], Array]
    log_likelihood: Optional[Callable[[Array, Array], Array]] = None
    grad_log_likelihood: Optional[Callable[[Array, Array], Array]] = None
    analytic_posterior: Optional[Callable[[Array], GaussianParams]] = None
    analytic_conditional_score: Optional[Callable[[float, Array, Array], Array]] = None
    analytic_prior_score: Optional[Callable[[float, Array], Array]] = None
    analytic_guidance_score: Optional[Callable[[float, Array, Array], Array]] = None
    name: str = field(default="model", compare=False)

    def sample_joint(self, rng: np.random.Generator, n: int) -> Tuple[Array, Array]:
        """Draws ``(x, y) ~ mu(x) g(y | x)``."""
        x = self.sample_prior(rng, n)
        return x, self.simulate_likelihood(x, rng)

    def sample_observations(self, rng: np.random.Generator, n: int) -> Array:
        """Draws ``y ~ p(y)`` by simulating the joint and discarding x."""
        return self.sample_joint(rng, n)[1]


def _rows(y: Array, n: int) -> Array:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return np.broadcast_to(y, (n, y.size))
    return y


def _ou_pair(t) -> Tuple[Array, Array]:
    t = np.asarray(t, dtype=float)
    return np.exp(-0.5 * t), -np.expm1(-t)


def make_conjugate_linear_gaussian(
    prior_var: float, obs_var: float, dimension: int = 1
) -> JointModel:
    """``mu = N(0, prior_var I)``, ``g(y | x) = N(y; x, obs_var I)``.

    Returns a JointModel with closed-form posterior, diffused conditional
    score, diffused prior score and guidance term ``grad log g_t(y | x_t)``.
    """
    if prior_var <= 0 or obs_var <= 0:
        raise ModelError("prior and observation variances must be positive")
    s0, ss = float(prior_var), float(obs_var)
    shrink = s0 / (s0 + ss)
    postVar = s0 * ss / (s0 + ss)

    def sample_prior(rng: np.random.Generator, n: int) -> Array:
        return np.sqrt(s0) * rng.standard_normal((n, dimension))

    def simulate_likelihood(x: Array, rng: np.random.Generator) -> Array:
        return x + np.sqrt(ss) * rng.standard_normal(x.shape)

    def log_likelihood(x: Array, y: Array) -> Array:
        batch = as_batch(x)
        obs = _rows(y, batch.shape[0])
        return -0.5 * np.sum((obs - batch) ** 2, axis=1) / ss - 0.5 * dimension * (
            LOG_2PI + np.log(ss)
        )

    def grad_log_likelihood(x: Array, y: Array) -> Array:
        batch = as_batch(x)
        return (_rows(y, batch.shape[0]) - batch) / ss

    def posterior(y: Array) -> GaussianParams:
        y = np.asarray(y, dtype=float).reshape(dimension)
        return GaussianParams(shrink * y, postVar * np.eye(dimension))

    def conditional_score(t, x: Array, y: Array) -> Array:
        batch = as_batch(x)
        n = batch.shape[0]
        alpha, variance = _ou_pair(as_times(t, n))
        marginalVar = alpha**2 * postVar + variance
        mean = alpha[:, None] * shrink * _rows(y, n)
        return -(batch - mean) / marginalVar[:, None]

    def prior_score(t, x: Array) -> Array:
        batch = as_batch(x)
        alpha, variance = _ou_pair(as_times(t, batch.shape[0]))
        return -batch / (alpha**2 * s0 + variance)[:, None]

    def guidance_score(t, x: Array, y: Array) -> Array:
        batch = as_batch(x)
        n = batch.shape[0]
        alpha, variance = _ou_pair(as_times(t, n))
        marginalVar = alpha**2 * s0 + variance
        coefficient = (alpha * s0 / marginalVar)[:, None]
        residualVar = (s0 + ss - alpha**2 * s0**2 / marginalVar)[:, None]
        return coefficient * (_rows(y, n) - coefficient * batch) / residualVar

    return JointModel(
        latent_dim=dimension,
        obs_dim=dimension,
        sample_prior=sample_prior,
        simulate_likelihood=simulate_likelihood,
        log_likelihood=log_likelihood,
        grad_log_likelihood=grad_log_likelihood,
        analytic_posterior=posterior,
        analytic_conditional_score=conditional_score,
        analytic_prior_score=prior_score,
        analytic_guidance_score=guidance_score,
        name="conjugate",
    )


def make_stationary_joint(dimension: int = 1) -> JointModel:
    """Prior ``N(0, I)`` with observations independent of x, so that every
    posterior is the stationary law of the reference process."""

    def sample_prior(rng: np.random.Generator, n: int) -> Array:
        return rng.standard_normal((n, dimension))

    def simulate_likelihood(x: Array, rng: np.random.Generator) -> Array:
        return rng.standard_normal(x.shape)

    def log_likelihood(x: Array, y: Array) -> Array:
        batch = as_batch(x)
        obs = _rows(y, batch.shape[0])
        return -0.5 * np.sum(obs**2, axis=1) - 0.5 * dimension * LOG_2PI

    def zero_score(t, x: Array, y: Array) -> Array:
        return np.zeros_like(as_batch(x))

    return JointModel(
        latent_dim=dimension,
        obs_dim=dimension,
        sample_prior=sample_prior,
        simulate_likelihood=simulate_likelihood,
        log_likelihood=log_likelihood,
        grad_log_likelihood=lambda x, y: np.zeros_like(as_batch(x)),
        analytic_posterior=lambda y: GaussianParams(
            np.zeros(dimension), np.eye(dimension)
        ),
        analytic_conditional_score=lambda t, x, y: -as_batch(x),
        analytic_prior_score=lambda t, x: -as_batch(x),
        analytic_guidance_score=zero_score,
        name="stationary",
    )


@functools.lru_cache(maxsize=8)
def _quadrature_rule(nodes: int, low: float, high: float, dimension: int):
    points, weights = np.polynomial.legendre.leggauss(nodes)
    points = 0.5 * (high - low) * points + 0.5 * (high + low)
    weights = 0.5 * (high - low) * weights
    if dimension == 1:
        return points[:, None], weights
    grid1, grid2 = np.meshgrid(points, points, indexing="ij")
    return (
        np.stack([grid1.ravel(), grid2.ravel()], axis=1),
        np.outer(weights, weights).ravel(),
    )


def _normalized_log_weights(target: TargetDensity, nodes, weights) -> Array:
    logGamma = target.log_gamma(nodes)
    if target.known_log_Z is not None:
        logZ = target.known_log_Z
    else:
        logZ = logsumexp(logGamma, b=weights)
    return logGamma - logZ + np.log(weights)


def quadrature_diffused_density(
    target: TargetDensity,
    t: float,
    x: Array,
    nodes: Optional[int] = None,
    bounds: Optional[Tuple[float, float]] = None,
):
    """Gauss-Legendre quadrature of ``int N(x; alpha(t) x_0, v(t) I) p(x_0)
    dx_0`` on a truncated box.

    Parameters:
    target: a target of dimension 1 or 2.
    t: diffusion time, > 0.
    x: evaluation point(s), (d,) or (n, d).
    nodes: nodes per axis; ``[quadrature] nodes`` by default.
    bounds: integration box per axis; ``[quadrature] low/high`` by default.

    Returns the density (float for a single point, (n,) otherwise).
    """
    if target.dimension > 2:
        raise UnsupportedError(
            f"quadrature supports d <= 2, got d = {target.dimension}"
        )
    if t <= 0:
        raise DomainError(f"quadrature needs t > 0, got {t}")
    nodes = nodes or Defaults.get_int("quadrature", "nodes")
    low, high = bounds or (
        Defaults.get_float("quadrature", "low"),
        Defaults.get_float("quadrature", "high"),
    )
    points, weights = _quadrature_rule(nodes, low, high, target.dimension)
    logMass = _normalized_log_weights(target, points, weights)
    alpha, variance = _ou_pair(t)
    single = np.asarray(x).ndim <= 1
    batch = as_batch(x).reshape(-1, target.dimension)
    out = np.empty(batch.shape[0])
    chunk = max(1, 2_000_000 // points.shape[0])
    for start in range(0, batch.shape[0], chunk):
        rows = batch[start : start + chunk]
        sq = np.sum((rows[:, None, :] - alpha * points[None, :, :]) ** 2, axis=2)
        logKernel = -0.5 * sq / variance - 0.5 * target.dimension * (
            LOG_2PI + np.log(variance)
        )
        out[start : start + chunk] = np.exp(
            logsumexp(logKernel + logMass[None, :], axis=1)
        )
    return float(out[0]) if single else out


def quadrature_diffused_score(
    target: TargetDensity, t: float, x: Array, h: float = 1e-4
) -> Array:
    """Central finite differences of ``log`` quadrature_diffused_density."""
    batch = as_batch(x).reshape(-1, target.dimension)
    score = np.empty_like(batch)
    for i in range(target.dimension):
        shift = np.zeros(target.dimension)
        shift[i] = h
        plus = np.log(quadrature_diffused_density(target, t, batch + shift))
        minus = np.log(quadrature_diffused_density(target, t, batch - shift))
        score[:, i] = (plus - minus) / (2.0 * h)
    return score


TARGET_NAMES = ("standard_normal", "gaussian", "mixture", "ring_mixture", "funnel")
MODEL_NAMES = ("conjugate", "stationary")


def _number(params: Mapping[str, str], key: str, default: float) -> float:
    try:
        return float(params.get(key, default))
    except (TypeError, ValueError) as error:
        raise ConfigError(f"model.{key}: expected a real number", f"model.{key}") from error


def _numbers(params: Mapping[str, str], key: str) -> List[float]:
    try:
        return [float(v) for v in str(params.get(key, "")).split(",") if v.strip()]
    except ValueError as error:
        raise ConfigError(f"model.{key}: expected reals", f"model.{key}") from error


def build_target(name: str, params: Mapping[str, str]) -> TargetDensity:
    """Builds a named target from string parameters (CLI config)."""
    dimension = int(_number(params, "dim", 1))
    if name == "standard_normal":
        return make_standard_normal(dimension)
    if name == "gaussian":
        mean = _numbers(params, "mean") or [0.0] * dimension
        variance = _number(params, "variance", 1.0)
        return make_gaussian_target(
            GaussianParams(np.array(mean), variance * np.eye(len(mean))),
            _number(params, "scale", 1.0),
        )
    if name == "mixture":
        centers = _numbers(params, "centers") or [-2.0, 2.0]
        variance = _number(params, "variance", 0.25)
        components = [
            GaussianParams(np.array([c]), np.array([[variance]])) for c in centers
        ]
        return make_gaussian_mixture(
            np.full(len(components), 1.0 / len(components)), components
        )
    if name == "ring_mixture":
        return make_ring_mixture(
            int(_number(params, "modes", 2)),
            _number(params, "radius", 2.0),
            _number(params, "variance", 0.25),
        )
    if name == "funnel":
        return make_funnel(_number(params, "scale", 3.0))
    raise ConfigError(
        f"model.name: unknown target {name!r}, expected one of "
        f"{', '.join(TARGET_NAMES)}",
        "model.name",
    )


def build_model(name: str, params: Mapping[str, str]) -> JointModel:
    """Builds a named joint model from string parameters (CLI config)."""
    dimension = int(_number(params, "dim", 1))
    if name == "conjugate":
        return make_conjugate_linear_gaussian(
            _number(params, "prior_var", 1.0), _number(params, "obs_var", 1.0), dimension
        )
    if name == "stationary":
        return make_stationary_joint(dimension)
    raise ConfigError(
        f"model.name: unknown joint model {name!r}, expected one of "
        f"{', '.join(MODEL_NAMES)}",
        "model.name",
    )


def posterior_target(model: JointModel, y: Array) -> TargetDensity:
    """The analytic posterior of ``model`` at ``y`` as a normalized target."""
    if model.analytic_posterior is None:
        raise UnsupportedError(f"{model.name}: no analytic posterior")
    return make_gaussian_target(model.analytic_posterior(y), 1.0)
