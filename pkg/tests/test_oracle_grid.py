"""Test cases for the __oracle_grid__ module."""
import numpy as np
import pytest

from pydiffbridge.exceptions import ConvergenceError, DomainError, GridError
from pydiffbridge.oracle_grid import (
    GridKernel,
    GridMeasure,
    GridPathLaw,
    Lattice,
    discretize_ou_kernel,
    grid_ipf_path_marginals,
    histogram_total_variation,
    kl_divergence,
    ou_kernel_chain,
    sinkhorn_static_sb,
    transport_cost,
    verify_h_identity,
)
from pydiffbridge.sde_core import TimeGrid


@pytest.fixture(name="lattice")
def _lattice() -> Lattice:
    """Fixture for a coarse symmetric 1-d lattice."""
    return Lattice.uniform(1, 121, -6.0, 6.0)


@pytest.fixture(name="shifted")
def _shifted(lattice: Lattice) -> GridMeasure:
    """Fixture for the discretized N(1.5, 0.5)."""
    return GridMeasure.from_log_density(
        lattice, lambda x: -np.sum((x - 1.5) ** 2, axis=1)
    )


@pytest.fixture(name="two_states")
def _two_states() -> Lattice:
    """Fixture for a two-point lattice."""
    return Lattice.uniform(1, 2, -1.0, 1.0)


def _max_row_tv(first: np.ndarray, second: np.ndarray) -> float:
    return float(0.5 * np.max(np.sum(np.abs(first - second), axis=1)))


def test_lattice_shapes() -> None:
    """It builds 1-d and 2-d lattices and nothing else."""
    square = Lattice.uniform(2, 5, -1.0, 1.0)
    assert square.size == 25
    assert square.dimension == 2
    assert square.spacing == pytest.approx(0.5)
    with pytest.raises(GridError):
        Lattice.uniform(3, 5, -1.0, 1.0)
    with pytest.raises(GridError):
        Lattice.uniform(1, 5, 1.0, 1.0)


def test_lattice_from_defaults() -> None:
    """It reads the [oracle] lattice settings."""
    lattice = Lattice.from_defaults(1)
    assert lattice.size == 400
    assert lattice.points[0, 0] == pytest.approx(-8.0)
    assert Lattice.from_defaults(2).shape == (80, 80)


def test_measure_validation(two_states: Lattice) -> None:
    """It accepts probability vectors only."""
    with pytest.raises(GridError):
        GridMeasure(two_states, np.array([1.2, -0.2]))
    with pytest.raises(GridError):
        GridMeasure(two_states, np.array([0.5, 0.6]))
    with pytest.raises(GridError):
        GridMeasure(two_states, np.array([1.0]))
    with pytest.raises(GridError):
        GridMeasure.from_weights(two_states, np.zeros(2))
    measure = GridMeasure.from_weights(two_states, np.array([1.0, 3.0]))
    assert np.allclose(measure.probabilities, [0.25, 0.75])
    assert measure.mean[0] == pytest.approx(0.5)
    assert measure.covariance[0, 0] == pytest.approx(0.75)


def test_kernel_validation(two_states: Lattice) -> None:
    """It accepts row-stochastic matrices only."""
    with pytest.raises(GridError):
        GridKernel(two_states, np.array([[0.5, 0.6], [0.5, 0.5]]))
    with pytest.raises(GridError):
        GridKernel(two_states, np.array([[1.5, -0.5], [0.5, 0.5]]))
    with pytest.raises(DomainError):
        discretize_ou_kernel(two_states, 0.0)


def test_ou_kernel_rows(lattice: Lattice) -> None:
    """It discretizes Gaussian transitions centred at alpha(t) x."""
    kernel = discretize_ou_kernel(lattice, 0.5)
    assert kernel.provenance == "ou"
    assert kernel.elapsed == pytest.approx(0.5)
    middle = kernel.matrix[60]
    assert lattice.points[np.argmax(middle), 0] == pytest.approx(0.0)


def test_kernel_chapman_kolmogorov() -> None:
    """It composes short kernels into the long one on the default lattice."""
    lattice = Lattice.from_defaults(1)
    composed = discretize_ou_kernel(lattice, 0.5).compose(discretize_ou_kernel(lattice, 0.5))
    assert composed.provenance == "composed"
    assert composed.elapsed == pytest.approx(1.0)
    assert _max_row_tv(composed.matrix, discretize_ou_kernel(lattice, 1.0).matrix) < 1e-3


def test_kernel_forgets_start() -> None:
    """It has identical rows once alpha(t) x is far below the spacing."""
    kernel = discretize_ou_kernel(Lattice.from_defaults(1), 40.0).matrix
    assert _max_row_tv(kernel, np.repeat(kernel[:1], kernel.shape[0], axis=0)) < 1e-6


def test_kernel_rows_at_moderate_time() -> None:
    """It keeps rows apart by no more than the shift alpha(t) of their means."""
    lattice = Lattice.from_defaults(1)
    kernel = discretize_ou_kernel(lattice, 20.0).matrix
    spread = float(np.ptp(lattice.points))
    bound = np.exp(-10.0) * spread / np.sqrt(2.0 * np.pi * -np.expm1(-20.0))
    gap = _max_row_tv(kernel, np.repeat(kernel[:1], kernel.shape[0], axis=0))
    assert gap < 1.05 * bound
    assert gap < 1e-3


def test_stationary_measure_invariant() -> None:
    """It keeps the discretized N(0, 1) under the OU kernel."""
    lattice = Lattice.from_defaults(1)
    stationary = GridMeasure.stationary(lattice)
    pushed = discretize_ou_kernel(lattice, 0.25).push(stationary)
    assert np.abs(pushed.probabilities - stationary.probabilities).sum() < 1e-10


def test_kernel_chain_shares_equal_steps(lattice: Lattice) -> None:
    """It builds one kernel per distinct step size."""
    chain = ou_kernel_chain(lattice, TimeGrid.uniform(1.0, 4))
    assert len(chain) == 4
    assert all(kernel is chain[0] for kernel in chain)


def test_sinkhorn_two_states(two_states: Lattice) -> None:
    """It scales a two-state kernel to the requested marginals."""
    kernel = GridKernel(two_states, np.array([[0.9, 0.1], [0.2, 0.8]]))
    nu0 = GridMeasure(two_states, np.array([0.5, 0.5]))
    nuT = GridMeasure(two_states, np.array([0.3, 0.7]))
    result = sinkhorn_static_sb(kernel, nu0, nuT, tol=1e-13)
    assert np.allclose(result.coupling.sum(axis=1), nu0.probabilities, atol=1e-12)
    assert np.allclose(result.coupling.sum(axis=0), nuT.probabilities, atol=1e-12)
    ratio = np.log(result.coupling) - np.log(kernel.matrix)
    assert ratio[0, 0] + ratio[1, 1] - ratio[0, 1] - ratio[1, 0] == pytest.approx(
        0.0, abs=1e-10
    )


def test_sinkhorn_fixed_point(lattice: Lattice, shifted: GridMeasure) -> None:
    """It leaves a coupling alone when the marginals already match."""
    stationary = GridMeasure.stationary(lattice)
    kernel = GridKernel(
        lattice, np.repeat(stationary.probabilities[None, :], lattice.size, axis=0)
    )
    result = sinkhorn_static_sb(kernel, shifted, stationary)
    assert result.iterations == 10
    expected = np.outer(shifted.probabilities, stationary.probabilities)
    assert np.max(np.abs(result.coupling - expected)) < 1e-14


def test_sinkhorn_reflection_symmetry(lattice: Lattice) -> None:
    """It keeps the x -> -x symmetry of even constraints."""
    even = GridMeasure.from_log_density(
        lattice,
        lambda x: np.logaddexp(-((x[:, 0] - 2.0) ** 2), -((x[:, 0] + 2.0) ** 2)),
    )
    result = sinkhorn_static_sb(
        discretize_ou_kernel(lattice, 1.0), even, GridMeasure.stationary(lattice)
    )
    flip = lattice.reflection()
    assert np.max(np.abs(result.coupling[flip][:, flip] - result.coupling)) < 1e-10


def test_sinkhorn_masks_support(lattice: Lattice) -> None:
    """It gives unreachable rows zero mass and -inf potentials."""
    weights = np.zeros(lattice.size)
    weights[50:70] = 1.0
    nu0 = GridMeasure.from_weights(lattice, weights)
    result = sinkhorn_static_sb(
        discretize_ou_kernel(lattice, 1.0), nu0, GridMeasure.stationary(lattice)
    )
    assert np.all(result.coupling[:50] == 0.0)
    assert np.all(np.isneginf(result.log_u[:50]))
    assert result.gap < 1e-12


def test_sinkhorn_iteration_cap(lattice: Lattice, shifted: GridMeasure) -> None:
    """It raises with the last gap when out of iterations."""
    with pytest.raises(ConvergenceError) as error:
        sinkhorn_static_sb(
            discretize_ou_kernel(lattice, 0.25),
            shifted,
            GridMeasure.stationary(lattice),
            tol=0.0,
            max_iterations=10,
        )
    assert np.isfinite(error.value.gap)


def test_path_law_projections(lattice: Lattice, shifted: GridMeasure) -> None:
    """It meets each constraint after projecting onto it."""
    chain = ou_kernel_chain(lattice, TimeGrid.uniform(1.0, 4))
    law = GridPathLaw(GridMeasure.stationary(lattice), chain)
    assert law.project_initial(shifted).initial is shifted
    projected = law.project_terminal(shifted)
    assert np.abs(projected.terminal.probabilities - shifted.probabilities).sum() < 1e-10
    assert all(kernel.provenance == "ipf" for kernel in projected.kernels)


def test_terminal_projection_unreachable(two_states: Lattice) -> None:
    """It refuses constraints on states the law never visits."""
    identity = GridKernel(two_states, np.eye(2))
    law = GridPathLaw(GridMeasure(two_states, np.array([1.0, 0.0])), [identity])
    with pytest.raises(GridError):
        law.project_terminal(GridMeasure(two_states, np.array([0.0, 1.0])))


def test_grid_ipf_matches_sinkhorn(lattice: Lattice, shifted: GridMeasure) -> None:
    """It reaches the static bridge coupling and decreases KL to it."""
    stationary = GridMeasure.stationary(lattice)
    chain = ou_kernel_chain(lattice, TimeGrid.uniform(1.0, 4))
    iterates = []
    result = grid_ipf_path_marginals(
        chain, shifted, stationary, on_iterate=iterates.append
    )
    assert result.gap < 1e-12
    assert len(result.marginals) == 5
    assert np.abs(result.marginals[-1].probabilities - stationary.probabilities).sum() < 1e-10
    composed = chain[0]
    for kernel in chain[1:]:
        composed = composed.compose(kernel)
    static = sinkhorn_static_sb(composed, shifted, stationary)
    final = result.law.endpoint_coupling()
    assert np.max(np.abs(final - static.coupling)) < 1e-8
    distances = [kl_divergence(final, law.endpoint_coupling()) for law in iterates]
    assert all(b <= a + 1e-10 for a, b in zip(distances, distances[1:]))
    assert result.kl_history[-1] < 1e-10


def test_h_identity(lattice: Lattice, shifted: GridMeasure) -> None:
    """It holds at every even IPF iterate."""
    residuals = []
    grid_ipf_path_marginals(
        ou_kernel_chain(lattice, TimeGrid.uniform(1.0, 4)),
        shifted,
        GridMeasure.stationary(lattice),
        on_iterate=lambda law: residuals.append(verify_h_identity(law, shifted)),
    )
    assert residuals
    assert max(residuals) < 1e-10


def test_ipf_iteration_cap(lattice: Lattice, shifted: GridMeasure) -> None:
    """It raises once the round budget is spent."""
    with pytest.raises(ConvergenceError):
        grid_ipf_path_marginals(
            ou_kernel_chain(lattice, TimeGrid.uniform(1.0, 4)),
            shifted,
            GridMeasure.stationary(lattice),
            tol=0.0,
            max_iterations=3,
        )


def test_kl_divergence() -> None:
    """It is zero on equal laws and infinite off support."""
    p = np.array([0.5, 0.5, 0.0])
    assert kl_divergence(p, p) == 0.0
    assert kl_divergence(p, np.array([1.0, 0.0, 0.0])) == float("inf")
    assert kl_divergence(p, np.array([0.25, 0.25, 0.5])) == pytest.approx(np.log(2.0))


def test_transport_cost(two_states: Lattice) -> None:
    """It averages the squared displacement."""
    assert transport_cost(np.diag([0.5, 0.5]), two_states) == 0.0
    assert transport_cost(np.array([[0.0, 0.5], [0.5, 0.0]]), two_states) == pytest.approx(4.0)


def test_histogram_total_variation(lattice: Lattice, shifted: GridMeasure, rng) -> None:
    """It is small for exact draws and one for mass off the lattice."""
    draws = rng.choice(lattice.points[:, 0], size=100000, p=shifted.probabilities)
    assert histogram_total_variation(draws, shifted, bins=60) < 0.03
    assert histogram_total_variation(np.full(10, 50.0), shifted) == pytest.approx(1.0)
    with pytest.raises(GridError):
        histogram_total_variation(draws, GridMeasure.stationary(Lattice.uniform(2, 5, -1, 1)))
