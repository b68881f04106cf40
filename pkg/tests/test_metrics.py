"""Test cases for the __metrics__ module."""
import json

import numpy as np
import pytest

from pydiffbridge.exceptions import ConfigError, DomainError
from pydiffbridge.metrics import (
    MetricsRecord,
    effective_sample_size,
    eval_metrics,
    ks_null_quantile,
    mode_weights,
    resolve_reference,
)
from pydiffbridge.models import make_funnel, make_ring_mixture, make_standard_normal


def test_effective_sample_size() -> None:
    """It is n for equal weights and 1 for a single dominant weight."""
    assert effective_sample_size(np.full(50, 3.0)) == pytest.approx(50.0)
    assert effective_sample_size(np.array([0.0, -1000.0, -1000.0])) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        effective_sample_size(np.array([]))


def test_ks_null_quantile() -> None:
    """It shrinks like one over the square root of n."""
    assert ks_null_quantile(10000) == pytest.approx(1.628 / 100.0, rel=0.01)
    assert ks_null_quantile(100) > ks_null_quantile(10000)


def test_exact_samples_pass_ks(rng: np.random.Generator) -> None:
    """It keeps exact draws below the null quantile."""
    target = make_standard_normal(2)
    record = eval_metrics(target.sample(rng, 5000), target)
    assert max(record.ks_statistics) < ks_null_quantile(5000, 0.999)
    assert max(record.mean_error) < 0.1
    assert record.covariance_error < 0.15
    assert record.mode_weights == [1.0]


def test_mode_weights(rng: np.random.Generator) -> None:
    """It splits a symmetric ring mixture evenly."""
    target = make_ring_mixture(4)
    weights = mode_weights(target.sample(rng, 8000), target.modes)
    assert np.allclose(weights, 0.25, atol=0.03)


def test_missing_marginals(rng: np.random.Generator) -> None:
    """It stores None where no marginal CDF is known."""
    target = make_funnel()
    record = eval_metrics(target.sample(rng, 200), target)
    assert record.ks_statistics[1] is None
    assert record.ks_statistics[0] is not None
    assert record.mode_weights is None


def test_no_reference() -> None:
    """It only counts samples and weights without a reference."""
    record = eval_metrics(np.zeros(4), log_weights=np.zeros(4))
    assert record.dimension == 1
    assert record.ess == pytest.approx(4.0)
    assert record.mean_error is None


def test_eval_errors() -> None:
    """It rejects empty samples and dimension mismatches."""
    with pytest.raises(DomainError):
        eval_metrics(np.zeros((0, 2)))
    with pytest.raises(DomainError):
        eval_metrics(np.zeros((3, 2)), make_standard_normal(1))


def test_record_json() -> None:
    """It writes non-finite values as null."""
    record = MetricsRecord(algorithm="ddgs", samples=3, dimension=1)
    record.log_z = {"importance_sampling": float("nan"), "known": np.float64(0.5)}
    record.mean_error = [np.float64(np.inf)]
    payload = json.loads(record.to_json())
    assert payload["log_z"] == {"importance_sampling": None, "known": 0.5}
    assert payload["mean_error"] == [None]
    assert payload["schema_version"] == "1"


def test_resolve_reference() -> None:
    """It maps targets to themselves and joint models to posteriors."""
    assert resolve_reference("ring_mixture", {}).name == "ring_mixture"
    posterior = resolve_reference("conjugate", {}, (2.0,))
    assert posterior.mean[0] == pytest.approx(1.0)


@pytest.mark.parametrize(
    "name, observation, field",
    [
        ("conjugate", (), "sampling.observation"),
        ("conjugate", (1.0, 2.0), "sampling.observation"),
        ("unknown", (), "model.name"),
    ],
)
def test_resolve_reference_errors(name: str, observation, field: str) -> None:
    """It names the field that cannot be resolved."""
    with pytest.raises(ConfigError) as error:
        resolve_reference(name, {}, observation)
    assert error.value.field == field
