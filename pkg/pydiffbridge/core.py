"""Core pipelines: run a configured experiment and write its artifacts."""
import logging
import os
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .approximator import AdamConfig, NetworkConfig, save_parameters
from .config import ExperimentConfig
from .ddgs import DdgsConfig, flow_log_z, fit_proposal_score, log_z_estimate, sample_ddgs, train_ddgs
from .ddps import DdpsConfig, sample_guided, sample_posterior, train_ddps
from .dsb_gs import DsbGsConfig, GsIpfState, run_dsb_gs, sample_dsb_gs
from .dsb_ps import DsbConfig, IpfState, run_dsb_ps, sample_dsb_posterior
from .exceptions import ConfigError, DomainError, VerificationError
from .metrics import MetricsRecord, eval_metrics, resolve_reference
from .models import build_model, build_target
from .oracle_grid import (
    GridMeasure,
    Lattice,
    discretize_ou_kernel,
    grid_ipf_path_marginals,
    ou_kernel_chain,
    sinkhorn_static_sb,
    transport_cost,
    verify_h_identity,
)
from .sde_core import TimeGrid, ou_moments

logger = logging.getLogger(__name__)

Array = np.ndarray

SAMPLES_FILE = "samples.csv"
METRICS_FILE = "metrics.json"
CONFIG_FILE = "config.ini"
CHECKPOINT_DIR = "checkpoints"


def write_samples(
    path: Union[str, Path], samples: Array, log_weights: Optional[Array] = None
) -> None:
    """Writes draws as CSV with header ``dim_0,...,dim_{d-1}[,log_weight]``.

    Values are printed with 17 significant digits so that reading them back
    recovers the float64 draws exactly.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    header = [f"dim_{i}" for i in range(samples.shape[1])]
    table = samples
    if log_weights is not None:
        header.append("log_weight")
        table = np.column_stack([samples, np.asarray(log_weights, dtype=float)])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(header), comments="")


def read_samples(path: Union[str, Path]) -> Tuple[Array, Optional[Array]]:
    """Reads a file written by :func:`write_samples`.

    Returns the draws and the log-weights column, if present.
    """
    try:
        with open(path, encoding="utf-8") as stream:
            header = stream.readline().strip().split(",")
    except OSError as error:
        raise ConfigError(f"cannot read samples file {path}", "sampling.input") from error
    if not header or not header[0].startswith("dim_"):
        raise ConfigError(f"{path}: not a samples file", "sampling.input")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[0] == 0:
        raise DomainError(f"{path}: no samples")
    if header[-1] == "log_weight":
        return table[:, :-1], table[:, -1]
    return table, None


def _network(config: ExperimentConfig) -> NetworkConfig:
    return NetworkConfig(
        hidden=config.get_ints("network", "hidden"),
        time_features=config.get_int("network", "time_features"),
        min_frequency=config.get_float("network", "min_frequency"),
        max_frequency=config.get_float("network", "max_frequency"),
        output_scale=config.get_float("network", "output_scale"),
    )


def _optimizer(config: ExperimentConfig) -> AdamConfig:
    return AdamConfig(
        learning_rate=config.get_float("optimizer", "learning_rate"),
        beta1=config.get_float("optimizer", "beta1"),
        beta2=config.get_float("optimizer", "beta2"),
        epsilon=config.get_float("optimizer", "epsilon"),
    )


def _progress(config: ExperimentConfig) -> bool:
    return config.get_bool("logging", "progress")


def _grid(config: ExperimentConfig) -> TimeGrid:
    return TimeGrid.uniform(config.horizon, config.steps)


def _observation(config: ExperimentConfig, dimension: int) -> Array:
    if len(config.observation) != dimension:
        raise ConfigError(
            f"sampling.observation: expected {dimension} values, "
            f"got {len(config.observation)}",
            "sampling.observation",
        )
    return np.asarray(config.observation, dtype=float)


class Run:
    """Output directory of one experiment."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.root = Path(config.output_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        config.write(self.root / CONFIG_FILE)

    def checkpoint(self, name: str, network) -> Path:
        directory = self.root / CHECKPOINT_DIR
        directory.mkdir(exist_ok=True)
        manifest = save_parameters(network, directory / f"{name}.bin")
        logger.debug("checkpoint %s written", manifest)
        return manifest

    def samples(self, samples: Array, log_weights: Optional[Array] = None) -> Path:
        path = self.root / SAMPLES_FILE
        write_samples(path, samples, log_weights)
        return path

    def metrics(self, record: MetricsRecord) -> Path:
        path = self.root / METRICS_FILE
        with open(path, "w", encoding="utf-8") as stream:
            stream.write(record.to_json())
            stream.write("\n")
        return path


def run_ddps_pipeline(config: ExperimentConfig, rng: np.random.Generator, run: Run) -> MetricsRecord:
    """Trains the amortized score and samples the posterior at the configured
    observation; with ``ddps.guidance`` set, a prior score plus likelihood
    guidance instead."""
    model = build_model(config.model_name, config.model_params)
    y = _observation(config, model.obs_dim)
    guidance = config.get("ddps", "guidance")
    if guidance not in ("none", "denoiser", "exact"):
        raise ConfigError(
            f"ddps.guidance: expected none, denoiser or exact, got {guidance!r}",
            "ddps.guidance",
        )
    settings = DdpsConfig(
        grid=_grid(config),
        batch_size=config.batch_size,
        iterations=config.iterations,
        t_min_fraction=config.get_float("ddps", "t_min_fraction"),
        optimizer=_optimizer(config),
        network=_network(config),
        unconditional=guidance != "none",
        progress=_progress(config),
    )
    sampler = train_ddps(model, settings, rng)
    run.checkpoint("ddps_score", sampler.network)
    if guidance == "none":
        draws = sample_posterior(sampler, y, config.samples, rng)
    else:
        draws = sample_guided(sampler, model, y, config.samples, rng, mode=guidance)
    run.samples(draws)
    record = eval_metrics(
        draws, resolve_reference(config.model_name, config.model_params, y), algorithm="ddps"
    )
    record.loss_traces["dsm"] = sampler.loss_trace
    return record


def run_dsb_ps_pipeline(config: ExperimentConfig, rng: np.random.Generator, run: Run) -> MetricsRecord:
    """IPF on the conditional bridge, a checkpoint per round, then posterior
    draws at the configured observation."""
    model = build_model(config.model_name, config.model_params)
    y = _observation(config, model.obs_dim)
    settings = DsbConfig(
        grid=_grid(config),
        rounds=config.rounds,
        inner_iterations=config.iterations,
        batch_size=config.batch_size,
        warm_start=config.get_bool("dsb_ps", "warm_start"),
        optimizer=_optimizer(config),
        network=_network(config),
        progress=_progress(config),
    )

    def on_round(state: IpfState) -> None:
        run.checkpoint(f"dsb_ps_round{state.iteration}_backward", state.backward)
        if state.forward is not None:
            run.checkpoint(f"dsb_ps_round{state.iteration}_forward", state.forward)

    state = run_dsb_ps(model, settings, rng, on_round)
    draws = sample_dsb_posterior(state, y, config.samples, rng)
    run.samples(draws)
    record = eval_metrics(
        draws, resolve_reference(config.model_name, config.model_params, y), algorithm="dsb-ps"
    )
    record.diagnostics = list(state.diagnostics)
    return record


def run_ddgs_pipeline(config: ExperimentConfig, rng: np.random.Generator, run: Run) -> MetricsRecord:
    """Trains the h-transform sampler, draws weighted samples and estimates
    log Z by importance sampling and, when ``ddgs.flow_iterations`` > 0,
    through the probability flow of a fitted proposal score."""
    target = build_target(config.model_name, config.model_params)
    settings = DdgsConfig(
        grid=_grid(config),
        batch_size=config.batch_size,
        iterations=config.iterations,
        optimizer=_optimizer(config),
        network=_network(config),
        progress=_progress(config),
    )
    sampler = train_ddgs(target, settings, rng)
    run.checkpoint("ddgs_correction", sampler.network)
    draws, logWeights = sample_ddgs(sampler, config.samples, rng)
    run.samples(draws, logWeights)
    record = eval_metrics(draws, target, logWeights, algorithm="ddgs")
    estimate = log_z_estimate(logWeights)
    record.log_z.update(
        importance_sampling=estimate.log_z,
        importance_sampling_relative_error=estimate.standard_error,
    )
    if target.known_log_Z is not None:
        record.log_z["known"] = target.known_log_Z
    flowIterations = config.get_int("ddgs", "flow_iterations")
    if flowIterations > 0:
        score = fit_proposal_score(sampler, rng, flowIterations)
        run.checkpoint("ddgs_proposal_score", score)
        points = draws[: config.get_int("ddgs", "flow_points")]
        record.log_z["flow"], _ = flow_log_z(sampler, score.evaluate, points)
    record.loss_traces["reverse_kl"] = sampler.loss_trace
    return record


def run_dsb_gs_pipeline(config: ExperimentConfig, rng: np.random.Generator, run: Run) -> MetricsRecord:
    """IPF for the unnormalized target with per-round checkpoints of the live
    drift networks and score."""
    target = build_target(config.model_name, config.model_params)
    settings = DsbGsConfig(
        grid=_grid(config),
        rounds=config.rounds,
        batch_size=config.batch_size,
        score_iterations=config.get_int("dsb_gs", "score_iterations"),
        correction_iterations=config.iterations,
        distill_iterations=config.get_int("dsb_gs", "distill_iterations"),
        distill_tolerance=config.get_float("dsb_gs", "distill_tolerance"),
        flow_step=config.get_float("dsb_gs", "flow_step"),
        max_live_networks=config.get_int("dsb_gs", "max_live_networks"),
        t_min_fraction=config.get_float("ddps", "t_min_fraction"),
        optimizer=_optimizer(config),
        network=_network(config),
        progress=_progress(config),
    )

    def on_round(state: GsIpfState) -> None:
        for i, part in enumerate(state.drift.parts):
            run.checkpoint(f"dsb_gs_round{state.iteration}_drift{i}", part)
        if state.score is not None:
            run.checkpoint(f"dsb_gs_round{state.iteration}_score", state.score)

    state = run_dsb_gs(target, settings, rng, on_round)
    draws = sample_dsb_gs(state, config.samples, rng)
    run.samples(draws)
    record = eval_metrics(draws, target, algorithm="dsb-gs")
    record.diagnostics = list(state.diagnostics)
    if state.diagnostics:
        record.log_z["elbo"] = float(state.diagnostics[-1]["elbo_log_z"])
    if target.known_log_Z is not None:
        record.log_z["known"] = target.known_log_Z
    record.loss_traces["reverse_kl"] = state.correction_trace
    return record


def run_eval_pipeline(config: ExperimentConfig, rng: np.random.Generator, run: Run) -> MetricsRecord:
    """Metrics of an existing samples CSV (``sampling.input``) against the
    reference of the model section."""
    source = config.sections.get("sampling", {}).get("input")
    if not source:
        raise ConfigError("sampling.input: a samples file is required", "sampling.input")
    samples, logWeights = read_samples(source)
    reference = resolve_reference(
        config.model_name, config.model_params, config.observation
    )
    return eval_metrics(samples, reference, logWeights, algorithm="eval")


VERIFY_THRESHOLDS: Dict[str, float] = {
    "ou_stationarity": 1e-12,
    "ou_chapman_kolmogorov": 1e-12,
    "kernel_chapman_kolmogorov": 1e-3,
    "sinkhorn_marginal_residual": 1e-10,
    "ipf_marginal_residual": 1e-10,
    "h_identity_residual": 1e-10,
    "entropic_cost_increase": 0.0,
}


def verify_suite(lattice: Optional[Lattice] = None, bridge_steps: int = 8) -> Dict[str, float]:
    """Runs the closed-form and grid oracle checks.

    Returns check name -> observed value; each passes when it does not exceed
    its entry in ``VERIFY_THRESHOLDS``.
    """
    checks: Dict[str, float] = {}
    times = np.geomspace(1e-3, 50.0, 200)
    alpha, variance = ou_moments(times)
    checks["ou_stationarity"] = float(np.max(np.abs(alpha**2 + variance - 1.0)))
    s, t = np.meshgrid(times[::10], times[::10])
    aS, vS = ou_moments(s)
    aT, vT = ou_moments(t)
    aST, vST = ou_moments(s + t)
    checks["ou_chapman_kolmogorov"] = float(
        max(np.max(np.abs(aS * aT - aST)), np.max(np.abs(aT**2 * vS + vT - vST)))
    )

    lattice = lattice or Lattice.from_defaults(1)
    composed = discretize_ou_kernel(lattice, 0.3).compose(discretize_ou_kernel(lattice, 0.5))
    direct = discretize_ou_kernel(lattice, 0.8)
    checks["kernel_chapman_kolmogorov"] = float(np.max(np.abs(composed.matrix - direct.matrix)))

    start = GridMeasure.from_log_density(
        lattice, lambda x: -np.sum((x - 1.5) ** 2, axis=1)
    )
    stationary = GridMeasure.stationary(lattice)
    result = sinkhorn_static_sb(discretize_ou_kernel(lattice, 1.0), start, stationary)
    checks["sinkhorn_marginal_residual"] = result.gap

    grid = TimeGrid.uniform(1.0, bridge_steps)
    residuals: List[float] = []
    ipf = grid_ipf_path_marginals(
        ou_kernel_chain(lattice, grid),
        start,
        stationary,
        on_iterate=lambda law: residuals.append(verify_h_identity(law, start)),
    )
    residuals.append(verify_h_identity(ipf.law, start))
    checks["ipf_marginal_residual"] = max(
        float(np.abs(ipf.marginals[0].probabilities - start.probabilities).sum()),
        float(np.abs(ipf.marginals[-1].probabilities - stationary.probabilities).sum()),
    )
    checks["h_identity_residual"] = max(residuals)

    costs: List[float] = []
    for horizon in (4.0, 2.0, 1.0, 0.5, 0.25):
        coupling = sinkhorn_static_sb(
            discretize_ou_kernel(lattice, horizon), start, stationary
        ).coupling
        costs.append(transport_cost(coupling, lattice))
    checks["entropic_cost_increase"] = float(max(np.diff(costs)))
    for name, value in checks.items():
        logger.info("verify %s = %.3g (threshold %.3g)", name, value, VERIFY_THRESHOLDS[name])
    return checks


def run_verify_pipeline(config: ExperimentConfig, rng: np.random.Generator, run: Run) -> MetricsRecord:
    record = MetricsRecord(algorithm="verify", samples=0, dimension=1)
    record.checks = verify_suite()
    return record


PIPELINES: Dict[str, Callable[[ExperimentConfig, np.random.Generator, Run], MetricsRecord]] = {
    "ddps": run_ddps_pipeline,
    "dsb-ps": run_dsb_ps_pipeline,
    "ddgs": run_ddgs_pipeline,
    "dsb-gs": run_dsb_gs_pipeline,
    "eval": run_eval_pipeline,
    "verify": run_verify_pipeline,
}


def run_experiment(config: ExperimentConfig) -> MetricsRecord:
    """Runs the configured pipeline and writes its artifacts.

    Parameters:
    config: the validated experiment config.

    Returns the MetricsRecord also written to ``metrics.json``. Failed oracle
    checks raise VerificationError after the metrics are written.
    """
    if config.workers > 1:
        logger.warning("workers = %d: rollouts run sequentially", config.workers)
    run = Run(config)
    rng = np.random.default_rng(config.seed)
    logger.info(
        "running %s (seed %d) into %s", config.algorithm, config.seed, os.fspath(run.root)
    )
    started = time.perf_counter()
    record = PIPELINES[config.algorithm](config, rng, run)
    record.wall_clock_seconds = time.perf_counter() - started
    run.metrics(record)
    failed = tuple(
        name
        for name, value in record.checks.items()
        if not value <= VERIFY_THRESHOLDS.get(name, np.inf)
    )
    if failed:
        raise VerificationError(f"oracle checks failed: {', '.join(failed)}", failed)
    return record
