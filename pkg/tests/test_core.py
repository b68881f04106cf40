"""Test cases for the __core__ module."""
import json
import logging
from pathlib import Path
from typing import Dict

import numpy as np
import pytest

from pydiffbridge import core
from pydiffbridge.config import ExperimentConfig
from pydiffbridge.core import (
    VERIFY_THRESHOLDS,
    read_samples,
    run_experiment,
    verify_suite,
    write_samples,
)
from pydiffbridge.exceptions import ConfigError, VerificationError
from pydiffbridge.oracle_grid import Lattice


def _config(
    tmpPath: Path, algorithm: str, name: str, sections: Dict[str, Dict[str, str]]
) -> ExperimentConfig:
    base = {
        "experiment": {"seed": "1", "output_dir": str(tmpPath / name)},
        "network": {"hidden": "8", "time_features": "4", "output_scale": "1.0"},
        "grid": {"horizon": "1.0", "steps": "4"},
        "training": {"iterations": "3", "batch_size": "8"},
        "sampling": {"samples": "20"},
    }
    for section, values in sections.items():
        base.setdefault(section, {}).update(values)
    return ExperimentConfig.from_sections(base, algorithm=algorithm)


@pytest.fixture(name="ddgs_sections")
def _ddgs_sections() -> Dict[str, Dict[str, str]]:
    """Fixture for a tiny h-transform run on a scaled Gaussian."""
    return {
        "model": {"name": "gaussian", "variance": "2", "scale": "3.5449077018110318"},
        "ddgs": {"flow_iterations": "2", "flow_points": "5"},
    }


def test_samples_round_trip(tmp_path: Path, rng: np.random.Generator) -> None:
    """It reads back the exact float64 draws and weights."""
    draws = rng.standard_normal((7, 3)) * 1e3
    weights = rng.standard_normal(7)
    path = tmp_path / "samples.csv"
    write_samples(path, draws, weights)
    assert path.read_text().splitlines()[0] == "dim_0,dim_1,dim_2,log_weight"
    readDraws, readWeights = read_samples(path)
    assert np.array_equal(readDraws, draws)
    assert np.array_equal(readWeights, weights)
    write_samples(path, draws[:, :1])
    readDraws, readWeights = read_samples(path)
    assert readDraws.shape == (7, 1)
    assert readWeights is None


def test_read_samples_errors(tmp_path: Path) -> None:
    """It names the input field for missing or foreign files."""
    foreign = tmp_path / "other.csv"
    foreign.write_text("a,b\n1,2\n")
    for path in (foreign, tmp_path / "missing.csv"):
        with pytest.raises(ConfigError) as error:
            read_samples(path)
        assert error.value.field == "sampling.input"


def test_ddgs_run_artifacts(tmp_path: Path, ddgs_sections) -> None:
    """It writes samples, metrics, the echoed config and checkpoints."""
    record = run_experiment(_config(tmp_path, "ddgs", "run", ddgs_sections))
    root = tmp_path / "run"
    assert (root / "config.ini").exists()
    assert (root / "checkpoints" / "ddgs_correction.bin").exists()
    assert (root / "checkpoints" / "ddgs_proposal_score.bin.ini").exists()
    draws, weights = read_samples(root / "samples.csv")
    assert draws.shape == (20, 1)
    assert weights.shape == (20,)
    payload = json.loads((root / "metrics.json").read_text())
    assert payload["algorithm"] == "ddgs"
    assert payload["log_z"]["known"] == pytest.approx(np.log(3.5449077018110318))
    assert set(payload["log_z"]) >= {"importance_sampling", "flow", "known"}
    assert len(payload["loss_traces"]["reverse_kl"]) == 3
    assert record.wall_clock_seconds is not None


def test_seed_determinism(tmp_path: Path, ddgs_sections) -> None:
    """It writes byte-identical samples for equal seeds."""
    run_experiment(_config(tmp_path, "ddgs", "first", ddgs_sections))
    run_experiment(_config(tmp_path, "ddgs", "second", ddgs_sections))
    first = (tmp_path / "first" / "samples.csv").read_bytes()
    second = (tmp_path / "second" / "samples.csv").read_bytes()
    assert first == second


def test_workers_run_sequentially(tmp_path: Path, ddgs_sections, caplog) -> None:
    """It warns that extra workers are ignored and keeps the draws unchanged."""
    parallel = dict(ddgs_sections, experiment={"workers": "2"})
    with caplog.at_level(logging.WARNING, logger="pydiffbridge.core"):
        run_experiment(_config(tmp_path, "ddgs", "parallel", parallel))
    assert "workers = 2: rollouts run sequentially" in caplog.text
    run_experiment(_config(tmp_path, "ddgs", "single", ddgs_sections))
    parallelSamples = (tmp_path / "parallel" / "samples.csv").read_bytes()
    assert parallelSamples == (tmp_path / "single" / "samples.csv").read_bytes()


@pytest.mark.parametrize("guidance", ["none", "exact", "denoiser"])
def test_ddps_pipeline(tmp_path: Path, guidance: str) -> None:
    """It samples the posterior at the configured observation."""
    config = _config(
        tmp_path,
        "ddps",
        guidance,
        {
            "model": {"name": "conjugate"},
            "sampling": {"observation": "2.0"},
            "ddps": {"guidance": guidance},
        },
    )
    record = run_experiment(config)
    assert record.samples == 20
    assert record.ks_statistics is not None
    assert len(record.loss_traces["dsm"]) == 3


def test_ddps_observation_required(tmp_path: Path) -> None:
    """It names the observation field when it is missing."""
    config = _config(tmp_path, "ddps", "run", {"model": {"name": "conjugate"}})
    with pytest.raises(ConfigError) as error:
        run_experiment(config)
    assert error.value.field == "sampling.observation"


def test_unknown_guidance(tmp_path: Path) -> None:
    """It rejects unknown guidance modes."""
    config = _config(
        tmp_path,
        "ddps",
        "run",
        {
            "model": {"name": "conjugate"},
            "sampling": {"observation": "2.0"},
            "ddps": {"guidance": "magic"},
        },
    )
    with pytest.raises(ConfigError) as error:
        run_experiment(config)
    assert error.value.field == "ddps.guidance"


def test_dsb_ps_pipeline(tmp_path: Path) -> None:
    """It checkpoints both networks after every round."""
    config = _config(
        tmp_path,
        "dsb-ps",
        "run",
        {
            "model": {"name": "conjugate"},
            "sampling": {"observation": "1.0"},
            "ipf": {"rounds": "1"},
        },
    )
    record = run_experiment(config)
    checkpoints = tmp_path / "run" / "checkpoints"
    assert (checkpoints / "dsb_ps_round0_backward.bin").exists()
    assert (checkpoints / "dsb_ps_round1_forward.bin").exists()
    assert len(record.diagnostics) == 3


def test_dsb_gs_pipeline(tmp_path: Path) -> None:
    """It reports the ELBO estimate of the last round."""
    config = _config(
        tmp_path,
        "dsb-gs",
        "run",
        {
            "model": {"name": "ring_mixture"},
            "ipf": {"rounds": "2"},
            "dsb_gs": {"score_iterations": "2", "distill_iterations": "2"},
        },
    )
    record = run_experiment(config)
    assert "elbo" in record.log_z
    assert record.log_z["known"] == 0.0
    assert record.mode_weights is not None
    assert (tmp_path / "run" / "checkpoints" / "dsb_gs_round2_score.bin").exists()


def test_eval_pipeline(tmp_path: Path, rng: np.random.Generator) -> None:
    """It evaluates an existing samples file against the model reference."""
    source = tmp_path / "draws.csv"
    write_samples(source, rng.standard_normal((500, 2)), np.zeros(500))
    config = _config(
        tmp_path,
        "eval",
        "run",
        {
            "model": {"name": "standard_normal", "dim": "2"},
            "sampling": {"input": str(source)},
        },
    )
    record = run_experiment(config)
    assert record.samples == 500
    assert record.ess == pytest.approx(500.0)
    assert len(record.ks_statistics) == 2


def test_eval_needs_input(tmp_path: Path) -> None:
    """It names the input field when no file is configured."""
    config = _config(tmp_path, "eval", "run", {"model": {"name": "standard_normal"}})
    with pytest.raises(ConfigError) as error:
        run_experiment(config)
    assert error.value.field == "sampling.input"


def test_verify_suite_small_lattice() -> None:
    """It passes every oracle check on a coarse lattice."""
    checks = verify_suite(Lattice.uniform(1, 161, -8.0, 8.0), bridge_steps=4)
    assert set(checks) == set(VERIFY_THRESHOLDS)
    for name, value in checks.items():
        assert value <= VERIFY_THRESHOLDS[name], name


def test_failed_check_raises(tmp_path: Path, monkeypatch) -> None:
    """It writes the metrics and then reports the failing checks."""
    monkeypatch.setattr(
        core, "verify_suite", lambda: {"h_identity_residual": 1.0, "ou_stationarity": 0.0}
    )
    config = ExperimentConfig.from_sections(
        {"experiment": {"seed": "0", "output_dir": str(tmp_path / "verify")}},
        algorithm="verify",
    )
    with pytest.raises(VerificationError) as error:
        run_experiment(config)
    assert error.value.failed == ("h_identity_residual",)
    payload = json.loads((tmp_path / "verify" / "metrics.json").read_text())
    assert payload["checks"]["h_identity_residual"] == 1.0


@pytest.mark.slow
def test_verify_default_lattice(tmp_path: Path) -> None:
    """It passes every oracle check on the default lattice."""
    config = ExperimentConfig.from_sections(
        {"experiment": {"seed": "0", "output_dir": str(tmp_path / "verify")}},
        algorithm="verify",
    )
    record = run_experiment(config)
    assert set(record.checks) == set(VERIFY_THRESHOLDS)
