"""pydiffbridge."""
__all__ = (
    "__version__",
    "Defaults",
    "ExperimentConfig",
    "DiffBridgeError",
    "TimeGrid",
    "Path",
    "Direction",
    "ou_moments",
    "ou_transition",
    "ou_transition_score",
    "ou_gaussian_marginal",
    "euler_maruyama",
    "probability_flow",
    "GaussianParams",
    "TargetDensity",
    "JointModel",
    "make_gaussian_target",
    "make_gaussian_mixture",
    "make_conjugate_linear_gaussian",
    "quadrature_diffused_density",
    "ParametricFunction",
    "Tape",
    "DdpsConfig",
    "train_ddps",
    "sample_posterior",
    "guided_score",
    "DsbConfig",
    "run_dsb_ps",
    "sample_dsb_posterior",
    "DdgsConfig",
    "train_ddgs",
    "sample_ddgs",
    "log_z_estimate",
    "flow_log_z",
    "DsbGsConfig",
    "run_dsb_gs",
    "sample_dsb_gs",
    "GridMeasure",
    "GridKernel",
    "Lattice",
    "discretize_ou_kernel",
    "sinkhorn_static_sb",
    "grid_ipf_path_marginals",
    "verify_h_identity",
    "MetricsRecord",
    "eval_metrics",
    "run_experiment",
)


from .approximator import ParametricFunction, Tape
from .config import Defaults, ExperimentConfig
from .core import run_experiment
from .ddgs import DdgsConfig, flow_log_z, log_z_estimate, sample_ddgs, train_ddgs
from .ddps import DdpsConfig, guided_score, sample_posterior, train_ddps
from .dsb_gs import DsbGsConfig, run_dsb_gs, sample_dsb_gs
from .dsb_ps import DsbConfig, run_dsb_ps, sample_dsb_posterior
from .exceptions import DiffBridgeError
from .metrics import MetricsRecord, eval_metrics
from .models import (
    GaussianParams,
    JointModel,
    TargetDensity,
    make_conjugate_linear_gaussian,
    make_gaussian_mixture,
    make_gaussian_target,
    quadrature_diffused_density,
)
from .oracle_grid import (
    GridKernel,
    GridMeasure,
    Lattice,
    discretize_ou_kernel,
    grid_ipf_path_marginals,
    sinkhorn_static_sb,
    verify_h_identity,
)
from .sde_core import (
    Direction,
    Path,
    TimeGrid,
    euler_maruyama,
    ou_gaussian_marginal,
    ou_moments,
    ou_transition,
    ou_transition_score,
    probability_flow,
)
from .version import __version__
