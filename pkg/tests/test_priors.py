import numpy as np
import pytest
from scipy import integrate, stats

from gfref.covmodel import AliasConfig, MaternParams, SpectralFamily, matern_corr, matern_dcorr_dtheta, matern_family
from gfref.designs import SpatialDesign, build_aux_grid, build_spectral_design, quadratic_trend, regular_grid_design
from gfref.priors import (
    ApproxRefPriorConst,
    ApproxRefPriorGeneral,
    ExactRefPrior,
    InverseGammaPrior,
    TabulatedDensity,
    approx_ref_prior_for_design,
    build_contrast_projector,
    normalize,
    tabulate,
    tail_diagnostic,
)
from gfref.spectral_basis import build_H1, build_X1, lambda_tilde


def dense_ref_prior(dS, S, X):
    """sqrt(tr(U^2) - tr(U)^2/(n-p)) with U = S' P, P the GLS residual projector."""
    Si = np.linalg.inv(S)
    SiX = Si @ X
    P = Si - SiX @ np.linalg.solve(X.T @ SiX, SiX.T)
    U = dS @ P
    k = X.shape[0] - X.shape[1]
    return np.sqrt(np.trace(U @ U) - np.trace(U) ** 2 / k)


def random_design(n, p, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(size=(n, 2))
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    return SpatialDesign(pts, X)


# -- contrasts ---------------------------------------------------------------


def test_contrast_projector_constant_mean():
    W = build_contrast_projector(np.ones((3, 1))).W
    assert W.shape == (3, 2)
    np.testing.assert_allclose(W.T @ np.ones(3), 0, atol=1e-14)


def test_contrast_projector_random():
    X = np.random.default_rng(0).normal(size=(10, 3))
    W = build_contrast_projector(X).W
    np.testing.assert_allclose(W.T @ W, np.eye(7), atol=1e-13)
    np.testing.assert_allclose(X.T @ W, 0, atol=1e-13)


def test_contrast_projector_single_contrast():
    X = np.random.default_rng(1).normal(size=(5, 4))
    W = build_contrast_projector(X).W
    assert W.shape == (5, 1)
    assert np.linalg.norm(W) == pytest.approx(1.0)


# -- exact prior ---------------------------------------------------------------


@pytest.mark.parametrize("nu,p", [(0.5, 1), (1.5, 2), (2.5, 3)])
def test_exact_prior_matches_dense_oracle(nu, p):
    d = random_design(12, p, seed=int(10 * nu) + p)
    prior = ExactRefPrior(d, nu)
    D = d.distances()
    for theta in (0.05, 0.2, 0.8):
        par = MaternParams(1, theta, nu)
        ref = dense_ref_prior(matern_dcorr_dtheta(D, par), matern_corr(D, par), d.covariates)
        assert prior(theta) == pytest.approx(ref, rel=1e-8)


def test_exact_prior_representations_agree():
    d = random_design(8, 1, seed=5)
    theta = np.geomspace(0.01, 2.0, 25)
    a = ExactRefPrior(d, 0.5, "a")(theta)
    b = ExactRefPrior(d, 0.5, "b")(theta)
    log_ratio = np.log(a / b)
    assert np.ptp(log_ratio) <= 1e-6


def test_exact_prior_vanishes_for_two_sites():
    d = SpatialDesign(np.array([[0.0, 0.0], [0.3, 0.1]]), np.ones((2, 1)))
    np.testing.assert_allclose(ExactRefPrior(d, 0.5)(np.geomspace(0.01, 5, 10)), 0.0, atol=1e-12)


def test_exact_prior_shape_on_grid():
    """Normalized density on the 10x10 grid peaks inside the plotted range (0, 2)."""
    d = regular_grid_design(10)
    tab = tabulate(ExactRefPrior(d, 0.5), np.geomspace(1e-3, 100, 150))
    assert tab.is_normalized
    grid = np.linspace(0.01, 2, 400)
    mode = grid[np.argmax(tab.pdf(grid))]
    assert 0.01 < mode < 1.0


# -- approximate priors ------------------------------------------------------


def _general_basis(m, delta, trend=None):
    spectral = build_spectral_design(m, m, delta)
    grid = build_aux_grid((np.zeros(2), delta * (m - 1) * np.ones(2)), m, m, delta)
    return build_X1(build_H1(grid, spectral), trend)


def test_const_equals_general_with_constant_mean():
    fam, a = matern_family(0.5), AliasConfig(0.133, 5)
    basis = _general_basis(12, 0.133)
    const = ApproxRefPriorConst(basis.spectral, fam, a)
    gen = ApproxRefPriorGeneral(basis, fam, a)
    theta = np.geomspace(0.01, 50, 50)
    np.testing.assert_allclose(const(theta), gen(theta), rtol=1e-8)


@pytest.mark.parametrize("nu", [0.5, 1.5])
def test_general_matches_dense_oracle(nu):
    """Dense evaluation with Lambda, Lambda' and X1 as explicit matrices."""
    delta = 1 / 9
    basis = _general_basis(10, delta, quadratic_trend)
    fam, a = matern_family(nu), AliasConfig(delta, 5)
    prior = ApproxRefPriorGeneral(basis, fam, a)
    for theta in (0.05, 0.2, 1.0):
        lam = lambda_tilde(basis.spectral, MaternParams(1, theta, nu), a).values
        h = 1e-6 * theta
        dlam = (
            lambda_tilde(basis.spectral, MaternParams(1, theta + h, nu), a).values
            - lambda_tilde(basis.spectral, MaternParams(1, theta - h, nu), a).values
        ) / (2 * h)
        ref = dense_ref_prior(np.diag(dlam), np.diag(lam), basis.X1)
        assert prior(theta) == pytest.approx(ref, rel=1e-5)


def test_include_all_changes_only_a_constant():
    s, fam, a = build_spectral_design(12, 12, 0.1), matern_family(0.5), AliasConfig(0.1, 5)
    theta = np.geomspace(0.02, 20, 30)
    r = ApproxRefPriorConst(s, fam, a, include_all=True)(theta) / ApproxRefPriorConst(s, fam, a)(theta)
    assert np.ptp(r) <= 1e-10 * r.mean()


def test_theta_free_family_gives_zero():
    fam = SpectralFamily(lambda r2: np.zeros(np.shape(r2)), lambda t: 1.0, lambda t: 0.0, lambda t: 1.0, lambda t: 0.0, 2.0)
    prior = ApproxRefPriorConst(build_spectral_design(6, 6, 0.2), fam, AliasConfig(0.2, 3))
    assert prior(0.3) == 0.0


def test_p6_approx_close_to_exact():
    d = regular_grid_design(10, trend=quadratic_trend)
    th = np.geomspace(1e-3, 20, 300)
    e = tabulate(ExactRefPrior(d, 0.5), th)
    a = tabulate(approx_ref_prior_for_design(d, 0.5), th)
    grid = np.geomspace(0.01, 2, 400)
    pe, pa = e.pdf(grid), a.pdf(grid)
    assert np.max(np.abs(pe - pa)) <= 0.15 * pe.max()


@pytest.mark.parametrize("nu", [0.5, 1.5])
def test_approx_tail_rate_and_constant(nu):
    prior = approx_ref_prior_for_design(regular_grid_design(10), nu)
    t = np.geomspace(50, 500, 20)
    slope = np.polyfit(np.log(t), np.log(prior(t)), 1)[0]
    assert slope == pytest.approx(-3, abs=0.1)
    c1 = tabulate(prior, np.geomspace(1e-3, 100, 250)).normalization
    c2 = tabulate(prior, np.geomspace(1e-3, 1000, 300)).normalization
    assert c2 == pytest.approx(c1, rel=1e-4)


def test_exact_tail_heavier_for_smooth_model():
    d = regular_grid_design(10)
    e, a = ExactRefPrior(d, 1.5), approx_ref_prior_for_design(d, 1.5)
    theta = np.array([0.5, 1.0, 2.0, 5.0])
    gap = np.log(e(theta)) - np.log(a(theta))
    assert np.all(np.diff(gap) > 0)


# -- inverse gamma and tabulated densities -------------------------------------


def test_inverse_gamma_matches_scipy():
    ig = InverseGammaPrior()
    t = np.geomspace(1e-3, 10, 30)
    np.testing.assert_allclose(ig.log_pdf(t), stats.invgamma(0.5, scale=np.sqrt(2) / 100).logpdf(t), rtol=1e-12)


def test_tabulated_uniform_is_normalized():
    t = np.linspace(1, 2, 401)
    tab = normalize(TabulatedDensity(t, np.ones_like(t), support=(1.0, 2.0)))
    assert tab.normalization == pytest.approx(1.0, rel=1e-5)
    assert tab.pdf(np.array([0.5, 2.5])).tolist() == [0.0, 0.0]


def test_tabulated_power_law_tail():
    t = np.geomspace(0.1, 100, 200)
    tab = TabulatedDensity(t, t**-3.0 * (t > 0))
    assert tab.tail_slopes()[1] == pytest.approx(-3.0, abs=0.01)
    assert tail_diagnostic(tab)["verdict"] == "proper"


def test_tabulated_flat_tail_is_improper():
    t = np.geomspace(0.1, 100, 200)
    tab = normalize(TabulatedDensity(t, 1.0 / (1 + t)))
    assert tab.normalization is None
    assert tab.meta["propriety"] == "improper"


def test_tabulated_normalization_matches_quadrature():
    t = np.geomspace(1e-3, 1e2, 300)
    v = stats.gamma(2.0, scale=0.5).pdf(t) * 7.0 + 1e-300
    tab = normalize(TabulatedDensity(t, v))
    assert tab.normalization == pytest.approx(7.0, rel=1e-4)
    total, _ = integrate.quad(lambda x: tab.pdf(np.exp(x)) * np.exp(x), np.log(1e-3), np.log(1e2), limit=200, epsabs=1e-6, epsrel=1e-6)
    assert total == pytest.approx(1.0, abs=1e-3)


def test_tabulated_json_round_trip():
    tab = tabulate(approx_ref_prior_for_design(regular_grid_design(6), 0.5), np.geomspace(0.01, 50, 60))
    back = TabulatedDensity.from_json(tab.to_json())
    assert back.digest() == tab.digest()
    assert back.normalization == tab.normalization
    np.testing.assert_allclose(back.pdf(np.array([0.1, 1.0])), tab.pdf(np.array([0.1, 1.0])))


def test_tabulated_rejects_bad_input():
    with pytest.raises(ValueError):
        TabulatedDensity(np.array([1.0, 0.5]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        TabulatedDensity(np.array([1.0, 2.0]), np.array([1.0, -1.0]))


def test_tabulate_records_conditioning_cut():
    d = regular_grid_design(10)
    tab = tabulate(ExactRefPrior(d, 2.5), np.geomspace(0.01, 1e3, 120))
    assert "conditioning_cut" in tab.meta
