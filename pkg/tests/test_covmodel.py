import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from gfref.covmodel import (
    AliasConfig,
    MaternParams,
    SpectralFamily,
    aliased_specden,
    dlog_aliased_specden,
    matern_corr,
    matern_dcorr_dtheta,
    matern_family,
    specden,
)


def bessel_matern(r, theta, nu):
    """Direct evaluation through K_nu, used as an independent oracle."""
    x = 2 * np.sqrt(nu) * np.asarray(r, dtype=float) / theta
    out = np.ones_like(x)
    pos = x > 0
    out[pos] = 2 ** (1 - nu) / special.gamma(nu) * x[pos] ** nu * special.kv(nu, x[pos])
    return out


@pytest.mark.parametrize("nu", [0.5, 1.0, 1.5, 2.5, 0.8, 3.7])
def test_corr_matches_bessel_oracle(nu):
    r = np.linspace(0, 2, 81)
    np.testing.assert_allclose(matern_corr(r, MaternParams(1.0, 0.4, nu)), bessel_matern(r, 0.4, nu), atol=1e-13)


def test_corr_exponential_case():
    r = np.linspace(0, 1, 11)
    np.testing.assert_allclose(matern_corr(r, MaternParams(0.21, 0.26, 0.5)), np.exp(-np.sqrt(2) * r / 0.26))


def test_corr_half_integer_closed_form():
    x = np.sqrt(6) * 0.5
    assert matern_corr(0.2, MaternParams(1, 0.4, 1.5)) == pytest.approx((1 + x) * np.exp(-x), rel=1e-14)


def test_corr_large_argument_underflows_to_zero():
    assert matern_corr(1e4, MaternParams(1, 0.1, 0.8)) == 0.0


@settings(max_examples=50, deadline=None)
@given(
    theta=st.floats(0.01, 10),
    nu=st.floats(0.2, 4),
)
def test_corr_is_decreasing_and_bounded(theta, nu):
    r = np.linspace(0, 5 * theta, 60)
    k = matern_corr(r, MaternParams(1.0, theta, nu))
    assert k[0] == 1.0
    assert np.all((k >= 0) & (k <= 1))
    assert np.all(np.diff(k) <= 1e-15)


def test_invalid_params():
    with pytest.raises(ValueError):
        MaternParams(1.0, -0.1, 0.5)
    with pytest.raises(ValueError):
        matern_corr(-1.0, MaternParams(1.0, 0.1, 0.5))


@pytest.mark.parametrize("theta,nu,r", [(0.2, 0.5, 0.1), (0.4, 2.5, 0.3), (0.7, 1.5, 0.5), (0.3, 0.9, 0.2)])
def test_dcorr_matches_finite_difference(theta, nu, r):
    h = 1e-5 * theta
    fd = (matern_corr(r, MaternParams(1, theta + h, nu)) - matern_corr(r, MaternParams(1, theta - h, nu))) / (2 * h)
    assert matern_dcorr_dtheta(r, MaternParams(1, theta, nu)) == pytest.approx(fd, rel=1e-6)


def test_dcorr_zero_at_origin():
    assert matern_dcorr_dtheta(0.0, MaternParams(1, 0.3, 1.5)) == 0.0


def test_specden_at_origin():
    assert specden(np.zeros(2), MaternParams(1, 0.4, 0.5)) == pytest.approx(0.16 / (4 * np.pi), rel=1e-14)


@pytest.mark.parametrize("nu", [0.5, 1.5])
def test_specden_integrates_to_one(nu):
    p = MaternParams(1, 0.4, nu)
    radial = lambda w: 2 * np.pi * w * specden(np.array([w, 0.0]), p)
    total, _ = integrate.quad(radial, 0, np.inf, epsabs=1e-12, limit=500)
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("nu,r", [(1.5, 0.3), (2.5, 0.5)])
def test_specden_hankel_transform_recovers_corr(nu, r):
    p = MaternParams(1, 0.4, nu)
    f = lambda w: 2 * np.pi * w * special.j0(w * r) * specden(np.array([w, 0.0]), p)
    val, _ = integrate.quad(f, 0, 400, limit=2000)
    tail, _ = integrate.quad(f, 400, np.inf, limit=2000)
    assert val + tail == pytest.approx(matern_corr(r, p), abs=1e-6)


def test_specden_symmetric():
    w = np.random.default_rng(0).normal(size=(20, 2))
    p = MaternParams(1, 0.3, 1.5)
    np.testing.assert_array_equal(specden(w, p), specden(-w, p))


def test_alias_truncation_zero_is_plain_density():
    fam = matern_family(0.5)
    w = np.array([[1.0, 2.0], [0.0, 0.0]])
    np.testing.assert_allclose(aliased_specden(w, 0.4, fam, AliasConfig(0.1, 0)), specden(w, MaternParams(1, 0.4, 0.5)), rtol=1e-14)


def _shell_increment(nu, w, t):
    fam = matern_family(nu)
    f = [aliased_specden(np.asarray(w, float), 0.4, fam, AliasConfig(0.1, k)) for k in (t, t + 1)]
    return abs(f[1] / f[0] - 1)


def test_alias_truncation_converges():
    edge = (np.pi / 0.1, 0.0)
    # one extra shell of 8T terms, each O(T^-(2 nu + 2)) relative to the leading term
    assert _shell_increment(0.5, edge, 5) < 1e-2
    assert _shell_increment(2.5, edge, 5) < 1e-6
    assert _shell_increment(0.5, (0.5, 0.5), 5) < 1e-4
    rate = np.log(_shell_increment(0.5, edge, 20) / _shell_increment(0.5, edge, 40)) / np.log(2)
    assert rate == pytest.approx(2.0, abs=0.15)


def test_alias_symmetric():
    fam = matern_family(1.5)
    w = np.random.default_rng(1).uniform(-np.pi / 0.1, np.pi / 0.1, size=(25, 2))
    a = AliasConfig(0.1, 5)
    np.testing.assert_allclose(aliased_specden(w, 0.3, fam, a), aliased_specden(-w, 0.3, fam, a), rtol=1e-13)


def test_alias_rejects_frequencies_outside_nyquist():
    with pytest.raises(ValueError):
        aliased_specden(np.array([4.0, 0.0]), 0.4, matern_family(0.5), AliasConfig(1.0, 5))


@pytest.mark.parametrize("theta,nu,w", [(0.2, 0.5, (0.5, 0.5)), (0.7, 1.5, (2.0, -1.0)), (1.3, 2.5, (30.0, 1.0))])
def test_dlog_alias_matches_finite_difference(theta, nu, w):
    fam, a = matern_family(nu), AliasConfig(0.1, 5)
    w = np.array(w)
    h = 1e-5 * theta
    fd = (np.log(aliased_specden(w, theta + h, fam, a)) - np.log(aliased_specden(w, theta - h, fam, a))) / (2 * h)
    assert dlog_aliased_specden(w, theta, fam, a) == pytest.approx(fd, rel=1e-6)


def test_dlog_zero_for_theta_free_family():
    fam = SpectralFamily(
        log_h1=lambda r2: np.zeros(np.shape(r2)),
        h2=lambda t: 1.0,
        dh2=lambda t: 0.0,
        u=lambda t: 1.0,
        du=lambda t: 0.0,
        a=2.0,
    )
    w = np.random.default_rng(2).uniform(-3, 3, size=(10, 2))
    np.testing.assert_array_equal(dlog_aliased_specden(w, 0.5, fam, AliasConfig(1.0, 3)), 0.0)
