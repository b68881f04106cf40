"""Finite-state referee for the bridge samplers: OU kernels on lattices,
log-domain Sinkhorn, exact IPF on discretized path laws and the
h-transform identity satisfied by IPF iterates."""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .config import Defaults
from .exceptions import ConvergenceError, DomainError, GridError
from .sde_core import TimeGrid, ou_moments

logger = logging.getLogger(__name__)

Array = np.ndarray

NORMALIZATION_TOLERANCE = 1e-12
MASS_FLOOR = 1e-14


@dataclass(frozen=True)
class Lattice:
    """Uniform 1-d or 2-d lattice; ``points`` is (m, d)."""

    points: Array
    spacing: float
    shape: Tuple[int, ...]

    @classmethod
    def uniform(cls, dimension: int, points: int, low: float, high: float) -> "Lattice":
        """``points`` nodes per axis on ``[low, high]^dimension``."""
        if dimension not in (1, 2):
            raise GridError(f"lattices are 1-d or 2-d, got d = {dimension}")
        if points < 2 or not high > low:
            raise GridError("a lattice needs >= 2 points on a non-empty interval")
        axis = np.linspace(low, high, points)
        if dimension == 1:
            nodes = axis[:, None]
        else:
            first, second = np.meshgrid(axis, axis, indexing="ij")
            nodes = np.stack([first.ravel(), second.ravel()], axis=1)
        return cls(nodes, float(axis[1] - axis[0]), (points,) * dimension)

    @classmethod
    def from_defaults(cls, dimension: int = 1) -> "Lattice":
        """Lattice from ``[oracle] points_1d/low_1d/high_1d`` (or ``_2d``)."""
        suffix = f"{dimension}d"
        return cls.uniform(
            dimension,
            Defaults.get_int("oracle", f"points_{suffix}"),
            Defaults.get_float("oracle", f"low_{suffix}"),
            Defaults.get_float("oracle", f"high_{suffix}"),
        )

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def reflection(self) -> Array:
        """Index permutation realizing ``x -> -x`` on a symmetric lattice."""
        return np.arange(self.size)[::-1]


@dataclass(frozen=True)
class GridMeasure:
    """Probability vector on a lattice."""

    lattice: Lattice
    probabilities: Array

    def __post_init__(self):
        probabilities = np.asarray(self.probabilities, dtype=float).reshape(-1)
        if probabilities.size != self.lattice.size:
            raise GridError(
                f"{probabilities.size} probabilities for {self.lattice.size} points"
            )
        if np.any(probabilities < 0) or not np.all(np.isfinite(probabilities)):
            raise GridError("probabilities must be finite and nonnegative")
        if abs(probabilities.sum() - 1.0) > NORMALIZATION_TOLERANCE:
            raise GridError(f"probabilities sum to {probabilities.sum()!r}, not 1")
        object.__setattr__(self, "probabilities", probabilities)

    @classmethod
    def from_weights(cls, lattice: Lattice, weights: Array) -> "GridMeasure":
        """Normalizes nonnegative weights."""
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if not total > 0:
            raise GridError("weights have no mass")
        return cls(lattice, weights / total)

    @classmethod
    def from_log_density(
        cls, lattice: Lattice, log_density: Callable[[Array], Array]
    ) -> "GridMeasure":
        """Discretizes an (unnormalized) log-density at the lattice points."""
        logs = np.asarray(log_density(lattice.points), dtype=float)
        return cls(lattice, np.exp(logs - logsumexp(logs)))

    @classmethod
    def stationary(cls, lattice: Lattice) -> "GridMeasure":
        """Discretized ``N(0, I)``."""
        return cls.from_log_density(
            lattice, lambda x: -0.5 * np.sum(x**2, axis=1)
        )

    @property
    def support(self) -> Array:
        return self.probabilities > 0

    @property
    def mean(self) -> Array:
        return self.probabilities @ self.lattice.points

    @property
    def covariance(self) -> Array:
        centered = self.lattice.points - self.mean
        return (centered * self.probabilities[:, None]).T @ centered


@dataclass(frozen=True)
class GridKernel:
    """Row-stochastic transition matrix on a lattice."""

    lattice: Lattice
    matrix: Array
    provenance: str = "custom"
    elapsed: Optional[float] = None

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.shape != (self.lattice.size, self.lattice.size):
            raise GridError(f"kernel shape {matrix.shape} does not fit the lattice")
        if np.any(matrix < 0):
            raise GridError("kernel entries must be nonnegative")
        if np.max(np.abs(matrix.sum(axis=1) - 1.0)) > NORMALIZATION_TOLERANCE:
            raise GridError("kernel rows must sum to 1")
        object.__setattr__(self, "matrix", matrix)

    def push(self, measure: GridMeasure) -> GridMeasure:
        """Law of the next state when the current one has law ``measure``."""
        pushed = measure.probabilities @ self.matrix
        return GridMeasure(self.lattice, pushed / pushed.sum())

    def compose(self, other: "GridKernel") -> "GridKernel":
        """``self`` followed by ``other``."""
        product = self.matrix @ other.matrix
        return GridKernel(
            self.lattice,
            product / product.sum(axis=1, keepdims=True),
            "composed",
            None
            if self.elapsed is None or other.elapsed is None
            else self.elapsed + other.elapsed,
        )


def _log_ou_kernel(lattice: Lattice, t: float) -> Array:
    alpha, variance = ou_moments(t)
    points = lattice.points
    sq = np.sum((points[None, :, :] - alpha * points[:, None, :]) ** 2, axis=2)
    logK = -0.5 * sq / variance
    return logK - logsumexp(logK, axis=1, keepdims=True)


def discretize_ou_kernel(lattice: Lattice, t: float) -> GridKernel:
    """Row-normalized ``N(x_j; alpha(t) x_i, v(t) I)``."""
    if not t > 0:
        raise DomainError(f"kernel elapsed time must be > 0, got {t}")
    matrix = np.exp(_log_ou_kernel(lattice, t))
    return GridKernel(
        lattice, matrix / matrix.sum(axis=1, keepdims=True), "ou", float(t)
    )


def ou_kernel_chain(lattice: Lattice, grid: TimeGrid) -> List[GridKernel]:
    """One OU kernel per grid step."""
    cache = {}
    chain = []
    for gamma in grid.step_sizes:
        key = round(float(gamma), 15)
        if key not in cache:
            cache[key] = discretize_ou_kernel(lattice, float(gamma))
        chain.append(cache[key])
    return chain


@dataclass(frozen=True)
class SinkhornResult:
    """Static bridge coupling with its log-potentials (``-inf`` off support)."""

    coupling: Array
    log_u: Array
    log_v: Array
    iterations: int
    gap: float


def _marginal_gap(coupling: Array, nu0: Array, nuT: Array) -> float:
    return max(
        float(np.abs(coupling.sum(axis=1) - nu0).sum()),
        float(np.abs(coupling.sum(axis=0) - nuT).sum()),
    )


def sinkhorn_static_sb(
    kernel: GridKernel,
    nu0: GridMeasure,
    nuT: GridMeasure,
    tol: Optional[float] = None,
    max_iterations: Optional[int] = None,
) -> SinkhornResult:
    """Log-domain Sinkhorn scaling of the reference joint ``nu0 x kernel``.

    Parameters:
    kernel: reference transition from time 0 to T.
    nu0: initial marginal constraint.
    nuT: terminal marginal constraint.
    tol: L1 marginal gap at which to stop; ``[oracle] tolerance`` by default.
    max_iterations: ``[oracle] max_iterations`` by default.

    Returns the SinkhornResult. Rows and columns outside the supports of the
    constraints are masked out.
    """
    tol = Defaults.get_float("oracle", "tolerance") if tol is None else tol
    max_iterations = max_iterations or Defaults.get_int("oracle", "max_iterations")
    rows = nu0.support
    cols = nuT.support
    with np.errstate(divide="ignore"):
        logK = np.log(kernel.matrix[np.ix_(rows, cols)])
    logA = np.log(nu0.probabilities[rows])
    logB = np.log(nuT.probabilities[cols])
    logU = np.zeros(logA.size)
    logV = np.zeros(logB.size)
    gap = np.inf
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        logU = logA - logsumexp(logK + logV[None, :], axis=1)
        logV = logB - logsumexp(logK + logU[:, None], axis=0)
        if iteration % 10 == 0 or iteration == max_iterations:
            sub = np.exp(logU[:, None] + logK + logV[None, :])
            gap = _marginal_gap(sub, nu0.probabilities[rows], nuT.probabilities[cols])
            if not np.isfinite(gap):
                raise ConvergenceError("Sinkhorn produced non-finite scalings", gap)
            if gap < tol:
                break
    else:
        raise ConvergenceError(
            f"Sinkhorn did not converge in {max_iterations} iterations, gap {gap:.3g}",
            gap,
        )
    m = kernel.lattice.size
    coupling = np.zeros((m, m))
    coupling[np.ix_(rows, cols)] = np.exp(logU[:, None] + logK + logV[None, :])
    fullU = np.full(m, -np.inf)
    fullU[rows] = logU
    fullV = np.full(m, -np.inf)
    fullV[cols] = logV
    logger.debug("Sinkhorn converged in %d iterations, gap %.3g", iteration, gap)
    return SinkhornResult(coupling, fullU, fullV, iteration, float(gap))


@dataclass(frozen=True)
class GridPathLaw:
    """Markov law on lattice paths: initial measure and forward kernels."""

    initial: GridMeasure
    kernels: Sequence[GridKernel]

    def marginals(self) -> List[GridMeasure]:
        """Marginal at every grid time, initial first."""
        measures = [self.initial]
        for kernel in self.kernels:
            measures.append(kernel.push(measures[-1]))
        return measures

    @property
    def terminal(self) -> GridMeasure:
        return self.marginals()[-1]

    def endpoint_coupling(self) -> Array:
        """Joint law of (X_0, X_T)."""
        joint = np.diag(self.initial.probabilities)
        for kernel in self.kernels:
            joint = joint @ kernel.matrix
        return joint

    def project_initial(self, measure: GridMeasure) -> "GridPathLaw":
        """KL projection onto laws with initial marginal ``measure``."""
        return GridPathLaw(measure, self.kernels)

    def project_terminal(self, measure: GridMeasure) -> "GridPathLaw":
        """KL projection onto laws with terminal marginal ``measure``: the
        backward kernels are kept and the forward kernels recomputed."""
        marginals = self.marginals()
        lattice = measure.lattice
        if np.any(measure.support & ~marginals[-1].support):
            raise GridError("terminal constraint charges states the law never reaches")
        current = measure.probabilities
        newKernels: List[GridKernel] = [None] * len(self.kernels)
        for k in range(len(self.kernels) - 1, -1, -1):
            before = marginals[k].probabilities
            after = marginals[k + 1].probabilities
            joint = before[:, None] * self.kernels[k].matrix
            with np.errstate(divide="ignore", invalid="ignore"):
                backward = np.where(after[None, :] > 0, joint / after[None, :], 0.0)
            newJoint = backward * current[None, :]
            previous = newJoint.sum(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                rows = np.where(
                    previous[:, None] > 0,
                    newJoint / previous[:, None],
                    self.kernels[k].matrix,
                )
            rows = rows / rows.sum(axis=1, keepdims=True)
            newKernels[k] = GridKernel(lattice, rows, "ipf", self.kernels[k].elapsed)
            current = previous
        initial = GridMeasure(lattice, current / current.sum())
        return GridPathLaw(initial, newKernels)


@dataclass(frozen=True)
class GridIpfResult:
    """Outcome of exact IPF on a lattice."""

    law: GridPathLaw
    marginals: List[GridMeasure]
    kl_history: List[float]
    iterations: int
    gap: float


def kl_divergence(p: Array, q: Array) -> float:
    """``sum p log(p / q)`` over the support of p; inf when q vanishes there."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def grid_ipf_path_marginals(
    kernels: Sequence[GridKernel],
    nu0: GridMeasure,
    nuT: GridMeasure,
    tol: Optional[float] = None,
    max_iterations: Optional[int] = None,
    reference_initial: Optional[GridMeasure] = None,
    on_iterate: Optional[Callable[[GridPathLaw], None]] = None,
) -> GridIpfResult:
    """Exact dynamic IPF between ``nu0`` and ``nuT`` for the reference chain.

    Parameters:
    kernels: reference forward kernels, one per grid step.
    nu0: initial constraint.
    nuT: terminal constraint.
    tol: L1 gap of the initial marginal at which to stop.
    max_iterations: IPF rounds allowed.
    reference_initial: initial measure of the reference law; stationary
    normal by default.
    on_iterate: called with every even iterate ``Pi^{2n}``, the reference
    law included, before it is projected.

    Returns the GridIpfResult with every time marginal of the converged law.
    """
    tol = Defaults.get_float("oracle", "tolerance") if tol is None else tol
    max_iterations = max_iterations or Defaults.get_int("oracle", "max_iterations")
    lattice = nu0.lattice
    law = GridPathLaw(reference_initial or GridMeasure.stationary(lattice), kernels)
    history: List[float] = []
    previous = law.endpoint_coupling()
    gap = np.inf
    for iteration in range(1, max_iterations + 1):
        if on_iterate is not None:
            on_iterate(law)
        law = law.project_initial(nu0).project_terminal(nuT)
        coupling = law.endpoint_coupling()
        history.append(kl_divergence(coupling, previous))
        previous = coupling
        gap = float(np.abs(law.initial.probabilities - nu0.probabilities).sum())
        if gap < tol:
            break
    else:
        raise ConvergenceError(
            f"grid IPF did not converge in {max_iterations} rounds, gap {gap:.3g}", gap
        )
    logger.debug("grid IPF converged in %d rounds, gap %.3g", iteration, gap)
    return GridIpfResult(law, law.marginals(), history, iteration, gap)


def verify_h_identity(law: GridPathLaw, target: GridMeasure) -> float:
    """Largest residual of ``Pi^{2n+2}_{0,T} = h_0(x_0) / h_T(x_T) Pi^{2n}_{0,T}``.

    ``Pi^{2n+2}`` is obtained by projecting ``law`` onto the initial
    constraint ``target`` and back onto its own terminal marginal, with
    ``h_0 = target / Pi^{2n}_0`` and ``h_T(x_T) = E[h_0(X_0) | X_T = x_T]``.
    Pairs with ``Pi^{2n}_0(x_0) < 1e-14`` are skipped."""
    joint = law.endpoint_coupling()
    start = law.initial.probabilities
    end = joint.sum(axis=0)
    rows = start >= MASS_FLOOR
    h0 = np.zeros_like(start)
    h0[rows] = target.probabilities[rows] / start[rows]
    cols = end > 0
    hT = np.ones_like(end)
    hT[cols] = (h0 @ joint)[cols] / end[cols]
    updated = (
        law.project_initial(target).project_terminal(law.terminal).endpoint_coupling()
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        predicted = np.where(
            cols[None, :] & (hT[None, :] > 0), h0[:, None] / hT[None, :] * joint, 0.0
        )
    residual = np.abs(updated - predicted)[np.ix_(rows, cols)]
    return float(residual.max()) if residual.size else 0.0


def transport_cost(coupling: Array, lattice: Lattice) -> float:
    """``E ||X_T - X_0||^2`` under a lattice coupling."""
    points = lattice.points
    sq = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    return float(np.sum(coupling * sq))


def histogram_total_variation(
    samples: Array, measure: GridMeasure, bins: int = 200
) -> float:
    """Total variation between a 1-d sample histogram and a grid measure
    aggregated into the same bins over the lattice range; sample mass outside
    the range counts fully."""
    if measure.lattice.dimension != 1:
        raise GridError("histogram comparison needs a 1-d lattice")
    samples = np.asarray(samples, dtype=float).ravel()
    points = measure.lattice.points[:, 0]
    half = 0.5 * measure.lattice.spacing
    edges = np.linspace(points[0] - half, points[-1] + half, bins + 1)
    counts, _ = np.histogram(samples, bins=edges)
    empirical = counts / samples.size
    outside = 1.0 - empirical.sum()
    index = np.clip(np.digitize(points, edges) - 1, 0, bins - 1)
    reference = np.bincount(index, weights=measure.probabilities, minlength=bins)
    return 0.5 * float(np.abs(empirical - reference).sum() + outside)
