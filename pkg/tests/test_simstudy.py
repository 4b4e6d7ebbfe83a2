import json

import numpy as np
import pytest

from gfref.covmodel import MaternParams, matern_corr
from gfref.designs import SpatialDesign, quadratic_trend, regular_grid_design
from gfref.likelihoods import DataVector
from gfref.simstudy import (
    QUADRATIC_BETA,
    ExperimentConfig,
    coverage_estimates,
    coverage_experiment,
    empirical_semivariogram,
    simulate_grf,
)


def test_simulated_covariance_matches_model():
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.3, 0.2], [0.7, 0.7], [1.0, 0.1]])
    d = SpatialDesign.from_trend(pts)
    params = MaternParams(2.0, 0.3, 1.5)
    reps = 4000
    Z = np.array([simulate_grf(d, params, seed=11, index=i).z for i in range(reps)])
    C = params.sigma2 * matern_corr(d.distances(), MaternParams(1.0, 0.3, 1.5))
    emp = Z.T @ Z / reps
    se = np.sqrt((C**2 + np.outer(np.diag(C), np.diag(C))) / reps)
    assert np.all(np.abs(emp - C) < 4 * se)


def test_simulated_mean_is_trend():
    d = regular_grid_design(4, trend=quadratic_trend)
    beta = np.array(QUADRATIC_BETA)
    Z = np.array([simulate_grf(d, MaternParams(0.5, 0.2, 0.5), beta=beta, seed=1, index=i).z for i in range(3000)])
    se = np.sqrt(0.5 / 3000)
    np.testing.assert_allclose(Z.mean(axis=0), d.covariates @ beta, atol=4.5 * se)


def test_simulation_is_seeded():
    d = regular_grid_design(5)
    a = simulate_grf(d, MaternParams(1, 0.2, 0.5), seed=3, index=7).z
    np.testing.assert_array_equal(a, simulate_grf(d, MaternParams(1, 0.2, 0.5), seed=3, index=7).z)


def test_white_noise_limit_is_independent():
    d = regular_grid_design(6)
    Z = np.array([simulate_grf(d, MaternParams(1, 1e-4, 0.5), seed=2, index=i).z for i in range(2000)])
    R = np.corrcoef(Z.T)
    off = R[~np.eye(36, dtype=bool)]
    assert np.max(np.abs(off)) < 4.5 / np.sqrt(2000)


def test_coverage_estimates_formula():
    cov, loglen = coverage_estimates([0.1, 0.5, 0.05], [1.0, 2.0, 0.1], 0.2)
    assert cov == pytest.approx(1 / 3)
    assert loglen == pytest.approx(np.mean(np.log([10.0, 4.0, 2.0])))


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(priors=("exact", "jeffreys"))
    with pytest.raises(ValueError):
        ExperimentConfig(n=99).build_design()
    with pytest.raises(ValueError):
        ExperimentConfig(mean="linear")


@pytest.fixture(scope="module")
def tiny_config():
    return ExperimentConfig(n=36, replicates=3, n_draws=300, priors=("approx", "ig"), mle=True, n_grid=120, seed=5)


def test_small_experiment_runs_and_is_deterministic(tiny_config):
    a = coverage_experiment(tiny_config)
    b = coverage_experiment(tiny_config)
    assert a.failures == 0
    assert a.to_csv() == b.to_csv()
    assert set(a.summary) == {"approx", "ig", "mle"}
    for s in a.summary.values():
        assert 0 <= s["coverage_theta"] <= 1 and s["n_ok"] == 3
    payload = json.loads(a.to_json())
    assert payload["config"]["replicates"] == 3 and payload["failure_fraction"] == 0


def test_worker_count_does_not_change_results(tiny_config):
    cfg = ExperimentConfig(**{**tiny_config.to_dict(), "mle": False, "workers": 2})
    serial = coverage_experiment(ExperimentConfig(**{**cfg.to_dict(), "workers": 1}))
    assert coverage_experiment(cfg).to_csv() == serial.to_csv()


def test_semivariogram_of_constant_field():
    d = regular_grid_design(6)
    fit = empirical_semivariogram(DataVector(np.full(36, 3.0), d))
    assert fit.sigma2 == 0
    np.testing.assert_array_equal(fit.gamma, 0.0)


def test_semivariogram_hand_computed_bins():
    pts = np.column_stack([np.arange(10.0), np.zeros(10)])
    z = np.arange(10.0) ** 0.5
    fit = empirical_semivariogram(DataVector(z, SpatialDesign.from_trend(pts)), bins=3, max_dist=3.0)
    for lag, gam in zip((1, 2, 3), fit.gamma):
        assert gam == pytest.approx(0.5 * np.mean((z[lag:] - z[:-lag]) ** 2))
    np.testing.assert_array_equal(fit.counts, [9, 8, 7])
    np.testing.assert_allclose(fit.centers, [1, 2, 3])


def test_semivariogram_recovers_parameters():
    d = regular_grid_design(20)
    data = simulate_grf(d, MaternParams(1.0, 0.15, 0.5), seed=8)
    fit = empirical_semivariogram(data)
    assert 0.5 < fit.sigma2 < 2.0
    assert 0.05 < fit.theta < 0.45
    assert fit.to_csv().startswith("distance,semivariance,pairs,fitted\n")
