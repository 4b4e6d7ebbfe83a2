import numpy as np
import pytest
from scipy import integrate, stats

from gfref.bayes import (
    ImproperPosteriorError,
    RouSampler,
    hpd_interval,
    integrated_lik_nu,
    likelihood_grid,
    posterior_theta,
    replicate_rng,
    sample_posterior,
)
from gfref.covmodel import MaternParams
from gfref.designs import SpatialDesign, regular_grid_design
from gfref.likelihoods import ExactLikelihood
from gfref.priors import InverseGammaPrior, approx_ref_prior_for_design, tabulate
from gfref.simstudy import simulate_grf


class LogNormalPrior:
    kind = "lognormal"

    def __init__(self, center, sd):
        self.center, self.sd = center, sd

    def log_pdf(self, theta):
        return stats.lognorm(self.sd, scale=self.center).logpdf(theta)


class FlatPrior:
    kind = "flat"

    def log_pdf(self, theta):
        return np.zeros(np.shape(theta))


@pytest.fixture(scope="module")
def small_data():
    pts = np.random.default_rng(3).uniform(size=(30, 2))
    d = SpatialDesign.from_trend(pts)
    return simulate_grf(d, MaternParams(1.0, 0.25, 0.5), seed=4, beta=[1.0])


@pytest.fixture(scope="module")
def small_grid(small_data):
    return likelihood_grid(small_data, 0.5)


# -- HPD ----------------------------------------------------------------------


def test_hpd_uniform():
    x = np.random.default_rng(0).uniform(size=100_000)
    lo, hi = hpd_interval(x, 0.95)
    assert hi - lo == pytest.approx(0.95, abs=2e-3)


def test_hpd_normal_is_symmetric():
    x = np.random.default_rng(1).normal(size=200_000)
    lo, hi = hpd_interval(x)
    assert lo == pytest.approx(-1.96, abs=0.03)
    assert hi == pytest.approx(1.96, abs=0.03)


def test_hpd_skewed_is_shorter_than_equal_tailed():
    x = np.random.default_rng(2).exponential(size=50_000)
    lo, hi = hpd_interval(x)
    q = np.quantile(x, [0.025, 0.975])
    assert lo < q[0] and hi - lo < q[1] - q[0]


def test_hpd_input_checks():
    with pytest.raises(ValueError):
        hpd_interval(np.arange(50.0))
    with pytest.raises(ValueError):
        hpd_interval(np.arange(500.0), level=1.0)


# -- ratio of uniforms -----------------------------------------------------------


@pytest.mark.parametrize(
    "dist",
    [stats.norm(0.3, 2.0), stats.gumbel_r(1.0, 0.5), stats.t(5)],
    ids=["normal", "gumbel", "t5"],
)
def test_rou_sampler_ks(dist):
    grid = np.linspace(-60, 60, 4001)
    mode = grid[np.argmax(dist.logpdf(grid))]
    s = RouSampler(lambda x: dist.logpdf(x), mode, grid)
    x, rate = s.sample(20_000, replicate_rng(5))
    assert stats.kstest(x, dist.cdf).pvalue > 1e-3
    assert 0 < rate <= 1


def test_rou_sampler_rejects_too_heavy_tail():
    cauchy = stats.cauchy()
    with pytest.raises(RuntimeError, match="tail"):
        # with r = 1/2, |v| grows like |x|^(1/3) for a Cauchy target
        RouSampler(cauchy.logpdf, 0.0, np.linspace(-100, 100, 2001))


def test_replicate_rng_streams():
    a = replicate_rng(1, 3).normal(size=5)
    np.testing.assert_array_equal(a, replicate_rng(1, 3).normal(size=5))
    assert not np.allclose(a, replicate_rng(1, 4).normal(size=5))


# -- posterior --------------------------------------------------------------------


def test_theta_posterior_matches_quadrature(small_data, small_grid):
    """The tabulated posterior cdf agrees with direct quadrature of prior x likelihood."""
    prior = InverseGammaPrior(2.0, 0.5)
    post = posterior_theta(small_data, prior, grid=small_grid)
    lik = ExactLikelihood(small_data, 0.5)
    top = post.log_target(np.array([post.mode_eta()]))[0]

    def f(eta):
        return np.exp(prior.log_pdf(np.exp(eta)) + eta + lik.integrated_loglik(np.exp(eta)) - top)

    lo, hi = np.log(1e-3), np.log(20.0)
    total = integrate.quad(f, lo, hi, limit=200)[0]
    for t in (0.1, 0.25, 0.6):
        ref = integrate.quad(f, lo, np.log(t), limit=200)[0] / total
        assert post.cdf(t) == pytest.approx(ref, abs=2e-3)


def test_theta_draws_follow_posterior(small_data, small_grid):
    prior = InverseGammaPrior(2.0, 0.5)
    draws = sample_posterior(small_data, prior, n_draws=5000, seed=9, grid=small_grid)
    post = posterior_theta(small_data, prior, grid=small_grid)
    assert stats.kstest(draws.theta, post.cdf).pvalue > 1e-3
    assert 0.3 < draws.acceptance_rate < 1


def test_sampling_is_reproducible(small_data, small_grid):
    prior = InverseGammaPrior()
    a = sample_posterior(small_data, prior, n_draws=200, seed=3, grid=small_grid)
    b = sample_posterior(small_data, prior, n_draws=200, seed=3, grid=small_grid)
    assert a.to_csv() == b.to_csv()
    c = sample_posterior(small_data, prior, n_draws=200, seed=4, grid=small_grid)
    assert a.to_csv() != c.to_csv()


def test_conditionals_at_fixed_theta(small_data, small_grid):
    """A spike prior pins theta; sigma^2 and beta then follow the conjugate formulas."""
    theta0 = 0.3
    draws = sample_posterior(small_data, LogNormalPrior(theta0, 1e-4), n_draws=40_000, seed=1, grid=small_grid)
    assert np.median(draws.theta) == pytest.approx(theta0, rel=1e-3)
    assert draws.theta_mode == pytest.approx(theta0, rel=1e-3)
    g = ExactLikelihood(small_data, 0.5).gls(theta0)
    k = small_data.n - small_data.p
    ig = stats.invgamma(k / 2, scale=g.S2 / 2)
    assert np.mean(draws.sigma2) == pytest.approx(ig.mean(), rel=0.01)
    assert stats.kstest(draws.sigma2, ig.cdf).pvalue > 1e-3
    # beta | z, theta is Student-t centred at the GLS estimate
    se = np.sqrt(g.cov_beta[0, 0] * ig.mean())
    assert np.mean(draws.beta[:, 0]) == pytest.approx(g.beta[0], abs=4 * se / np.sqrt(40_000))


def test_exact_marginal_close_to_grid(small_data, small_grid):
    prior = InverseGammaPrior(2.0, 0.5)
    a = posterior_theta(small_data, prior, grid=small_grid)
    b = posterior_theta(small_data, prior, grid=small_grid, exact_marginal=True)
    assert b.mode_theta() == pytest.approx(a.mode_theta(), rel=1e-4)


def test_flat_prior_refused(small_data, small_grid):
    with pytest.raises(ImproperPosteriorError):
        sample_posterior(small_data, FlatPrior(), n_draws=10, grid=small_grid)


def test_summary_and_json(small_data, small_grid):
    prior = tabulate(approx_ref_prior_for_design(small_data.design, 0.5), np.geomspace(1e-3, 100, 150))
    draws = sample_posterior(small_data, prior, n_draws=500, seed=2, grid=small_grid)
    s = draws.summary()
    assert s["prior"] == draws.prior_kind
    assert s["theta_hpd"][0] < s["theta_median"] < s["theta_hpd"][1]
    assert s["prior_digest"] == prior.digest()
    assert draws.to_csv().splitlines()[0] == "beta_1,sigma2,theta"


def test_smoothness_scan_small():
    d = regular_grid_design(8)
    data = simulate_grf(d, MaternParams(1.0, 0.3, 0.5), seed=2)
    scan = integrated_lik_nu([0.5, 1.0], data, n_grid=120)
    assert scan.log_m.shape == (2,)
    assert np.all(np.isfinite(scan.log_C))
    assert len(scan.tuning) == 2 and scan.nu_hat in (0.5, 1.0)
    assert scan.to_csv().startswith("nu,log_m,log_C,flagged\n")
