"""Gaussian, integrated and approximate restricted likelihoods; REML and profile intervals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import interpolate, optimize, stats

from ._linalg import ConditioningError, chol_logdet, guarded_cholesky, orthonormal_complement, tri_solve
from .covmodel import AliasConfig, AliasedSpectrum, MaternParams, SpectralFamily, matern_corr, matern_family
from .designs import SpatialDesign, SpectralDesign, as_aux_grid, build_spectral_design, nearest_neighbor_distances
from .spectral_basis import build_H1, layout_spectrum

__all__ = [
    "DataVector",
    "GLSFit",
    "ExactLikelihood",
    "ApproxRestrictedLikelihood",
    "RemlFit",
    "ProfileInterval",
    "gauss_loglik",
    "integrated_loglik_theta",
    "approx_restricted_loglik",
    "approx_contrasts",
    "reml_fit",
    "profile_interval",
    "profile_ci",
    "log_theta_bounds",
]


@dataclass(frozen=True)
class DataVector:
    z: np.ndarray
    design: SpatialDesign

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).ravel()
        if z.shape[0] != self.design.n:
            raise ValueError(f"z has {z.shape[0]} entries, design has {self.design.n} sites")
        if not np.all(np.isfinite(z)):
            raise ValueError("observations must be finite")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def n(self):
        return self.design.n

    @property
    def p(self):
        return self.design.p


def log_theta_bounds(design: SpatialDesign, lo=1e-3, hi=1e3):
    """Search range for log(theta): [log(lo * d_min), log(hi * d_max)]."""
    _, d_min = nearest_neighbor_distances(design)
    lo_b, hi_b = design.bounding_box
    d_max = float(np.hypot(*(hi_b - lo_b)))
    return np.log(lo * d_min), np.log(hi * d_max)


# ---------------------------------------------------------------------------
# exact likelihoods


@dataclass(frozen=True)
class GLSFit:
    """Generalized least squares quantities at one range value (unit variance)."""

    theta: float
    logdet: float  # log|Sigma|
    logdet_info: float  # log|X^T Sigma^-1 X|
    beta: np.ndarray
    cov_beta: np.ndarray  # (X^T Sigma^-1 X)^-1
    S2: float  # (z - X beta)^T Sigma^-1 (z - X beta)
    chol: np.ndarray = field(repr=False)


class ExactLikelihood:
    """Exact likelihood computations for one dataset and smoothness.

    Correlation matrices are built with unit variance; results for the most
    recent range are cached because the integrated likelihood, the GLS
    estimate and the conditional posteriors all need the same factorization.
    """

    def __init__(self, data: DataVector, nu: float):
        self.data = data
        self.nu = float(nu)
        self._dist = data.design.distances()
        self._cache: dict = {}
        self._W = None

    @property
    def n(self):
        return self.data.n

    @property
    def p(self):
        return self.data.p

    def corr(self, theta):
        return matern_corr(self._dist, MaternParams(1.0, float(theta), self.nu))

    def gls(self, theta) -> GLSFit:
        theta = float(theta)
        hit = self._cache.get(theta)
        if hit is not None:
            return hit
        X, z = self.data.design.covariates, self.data.z
        L = guarded_cholesky(self.corr(theta), theta)
        Xw = tri_solve(L, X)
        zw = tri_solve(L, z)
        Q, R = np.linalg.qr(Xw)
        beta = np.linalg.solve(R, Q.T @ zw)
        resid = zw - Xw @ beta
        Rinv = np.linalg.inv(R)
        fit = GLSFit(
            theta,
            chol_logdet(L),
            2.0 * float(np.sum(np.log(np.abs(np.diag(R))))),
            beta,
            Rinv @ Rinv.T,
            float(resid @ resid),
            L,
        )
        if len(self._cache) > 8:
            self._cache.clear()
        self._cache[theta] = fit
        return fit

    def integrated_loglik(self, theta, representation="a"):
        """log L^I(theta) up to a constant.

        ``"a"``: -1/2 log|Sigma| - 1/2 log|X^T Sigma^-1 X| - (n-p)/2 log S^2.
        ``"b"``: -1/2 log|W^T Sigma W| - (n-p)/2 log(z_W^T (W^T Sigma W)^-1 z_W).
        """
        k = self.n - self.p
        if representation == "a":
            g = self.gls(theta)
            return -0.5 * g.logdet - 0.5 * g.logdet_info - 0.5 * k * np.log(g.S2)
        if representation != "b":
            raise ValueError(f"representation must be 'a' or 'b', got {representation!r}")
        if self._W is None:
            self._W = orthonormal_complement(self.data.design.covariates)
        W = self._W
        Lw = guarded_cholesky(W.T @ self.corr(theta) @ W, theta)
        zw = tri_solve(Lw, W.T @ self.data.z)
        return -0.5 * chol_logdet(Lw) - 0.5 * k * np.log(float(zw @ zw))

    def limit_at_zero(self):
        """Value of representation (a) as theta -> 0, where Sigma -> I."""
        X, z = self.data.design.covariates, self.data.z
        beta, *_ = np.linalg.lstsq(X, z, rcond=None)
        r = z - X @ beta
        _, logdet = np.linalg.slogdet(X.T @ X)
        return -0.5 * logdet - 0.5 * (self.n - self.p) * np.log(float(r @ r))

    def reml_profile(self, theta):
        """REML log-likelihood with sigma^2 profiled out; equals the integrated one up to a constant."""
        return self.integrated_loglik(theta)

    def ml_profile(self, theta):
        """Full log-likelihood maximized over beta and sigma^2 (up to a constant)."""
        g = self.gls(theta)
        return -0.5 * g.logdet - 0.5 * self.n * np.log(g.S2 / self.n)

    def loglik(self, beta, sigma2, theta):
        g = self.gls(theta)
        X, z = self.data.design.covariates, self.data.z
        r = tri_solve(g.chol, z - X @ np.asarray(beta, dtype=float).ravel())
        n = self.n
        return float(-0.5 * n * np.log(2 * np.pi * sigma2) - 0.5 * g.logdet - 0.5 * (r @ r) / sigma2)


def gauss_loglik(beta, sigma2, theta, data: DataVector, nu):
    """Multivariate normal log density of z with Matérn covariance."""
    if not sigma2 > 0 or not theta > 0:
        raise ValueError("sigma2 and theta must be positive")
    return ExactLikelihood(data, nu).loglik(beta, sigma2, theta)


def integrated_loglik_theta(theta, data: DataVector, nu, representation="a"):
    lik = ExactLikelihood(data, nu)
    theta = np.asarray(theta, dtype=float)
    out = np.array([lik.integrated_loglik(t, representation) for t in theta.ravel()])
    return out.reshape(theta.shape) if theta.ndim else float(out[0])


# ---------------------------------------------------------------------------
# approximate restricted likelihood


def approx_contrasts(data: DataVector, spectral: Optional[SpectralDesign] = None):
    """Contrasts V_2..V_M of a constant-mean field observed on a complete even lattice.

    Returns (v, spectral) with the spectral design of the lattice itself
    (M = n) unless one is supplied.
    """
    grid, order = as_aux_grid(data.design)
    if spectral is None:
        spectral = build_spectral_design(grid.m1, grid.m2, grid.delta)
    V = build_H1(grid, spectral).contrasts(data.z[order])
    return V[1:], spectral


class ApproxRestrictedLikelihood:
    """Matrix-free approximation of the restricted likelihood, constant mean.

    The contrasts are independent N(0, sigma^2 c f~(omega_j)) across the M - 1
    non-origin layout frequencies.
    """

    def __init__(self, v, spectral: SpectralDesign, family: SpectralFamily, alias: AliasConfig):
        self.v2 = np.asarray(v, dtype=float) ** 2
        if self.v2.shape[0] != spectral.M - 1:
            raise ValueError(f"expected {spectral.M - 1} contrasts, got {self.v2.shape[0]}")
        self.c = (2 * np.pi / alias.delta) ** 2
        self._spec = AliasedSpectrum(layout_spectrum(spectral, family, alias).omega[1:], family, alias)

    def _logvar(self, theta):
        return np.log(self.c) + self._spec.log_density(theta)

    def loglik(self, sigma2, theta):
        lv = np.log(sigma2) + self._logvar(theta)
        return float(-0.5 * np.sum(lv + self.v2 * np.exp(-lv)))

    def sigma2_hat(self, theta):
        return float(np.mean(self.v2 * np.exp(-self._logvar(theta))))

    def profile(self, theta):
        lv = self._logvar(theta)
        s2 = float(np.mean(self.v2 * np.exp(-lv)))
        return float(-0.5 * np.sum(lv) - 0.5 * self.v2.size * (np.log(s2) + 1))


def approx_restricted_loglik(sigma2, theta, v_contrasts, alias: AliasConfig, spectral: SpectralDesign, nu=0.5):
    family = nu if isinstance(nu, SpectralFamily) else matern_family(nu)
    return ApproxRestrictedLikelihood(v_contrasts, spectral, family, alias).loglik(sigma2, theta)


# ---------------------------------------------------------------------------
# REML


@dataclass(frozen=True)
class RemlFit:
    sigma2: float
    theta: float
    method: str
    converged: bool
    at_bound: bool
    objective: float
    iterations: int
    message: str = ""
    trace: tuple = ()

    def to_dict(self):
        return {k: getattr(self, k) for k in ("sigma2", "theta", "method", "converged", "at_bound", "objective", "iterations", "message")}


def _safe(fun):
    def wrapped(x):
        try:
            val = fun(x)
        except ConditioningError:
            return -np.inf
        return val if np.isfinite(val) else -np.inf

    return wrapped


def maximize_log_theta(objective: Callable[[float], float], bounds, n_scan=41, xtol=1e-6):
    """Maximize objective(theta) over log(theta) in ``bounds``.

    A coarse scan brackets the maximum, then golden-section search refines
    it. Returns (theta, value, at_bound, iterations, trace).
    """
    f = _safe(lambda eta: objective(np.exp(eta)))
    etas = np.linspace(bounds[0], bounds[1], n_scan)
    vals = np.array([f(e) for e in etas])
    if not np.any(np.isfinite(vals)):
        raise ConditioningError("objective not finite anywhere on the search range")
    k = int(np.argmax(vals))
    trace = tuple(zip(np.exp(etas).tolist(), vals.tolist()))
    if k == 0 or k == n_scan - 1:
        return float(np.exp(etas[k])), float(vals[k]), True, n_scan, trace
    res = optimize.minimize_scalar(
        lambda e: -f(e), bracket=(etas[k - 1], etas[k], etas[k + 1]), method="golden", tol=xtol
    )
    eta = float(res.x)
    val = -float(res.fun)
    if val < vals[k]:
        eta, val = float(etas[k]), float(vals[k])
    return float(np.exp(eta)), val, False, n_scan + int(res.nfev), trace


def reml_fit(data: DataVector, method="exact", nu=0.5, alias: Optional[AliasConfig] = None, bounds=None, truncation=5):
    """REML estimates of (sigma^2, theta) with sigma^2 profiled in closed form.

    ``method="approximate"`` needs a constant mean and a complete regular
    lattice with even side counts, which then serves as its own auxiliary
    grid (M = n).
    """
    if bounds is None:
        bounds = log_theta_bounds(data.design)
    if method == "exact":
        lik = ExactLikelihood(data, nu)
        theta, val, at_bound, it, trace = maximize_log_theta(lik.reml_profile, bounds)
        sigma2 = lik.gls(theta).S2 / (data.n - data.p)
    elif method == "approximate":
        if data.p != 1:
            raise ValueError("approximate REML needs a constant mean")
        v, spectral = approx_contrasts(data)
        alias = alias or AliasConfig(spectral.delta, truncation)
        lik = ApproxRestrictedLikelihood(v, spectral, matern_family(nu), alias)
        theta, val, at_bound, it, trace = maximize_log_theta(lik.profile, bounds)
        sigma2 = lik.sigma2_hat(theta)
    else:
        raise ValueError(f"method must be 'exact' or 'approximate', got {method!r}")
    msg = "maximum at the edge of the search range" if at_bound else ""
    return RemlFit(float(sigma2), float(theta), method, not at_bound, at_bound, float(val), it, msg, trace)


# ---------------------------------------------------------------------------
# profile intervals


@dataclass(frozen=True)
class ProfileInterval:
    estimate: float
    lower: float
    upper: float
    level: float
    lower_flagged: bool = False
    upper_flagged: bool = False

    @property
    def log_length(self):
        return float(np.log(self.upper) - np.log(self.lower))

    def contains(self, value):
        return self.lower < value < self.upper


def profile_interval(profile: Callable[[float], float], estimate, level=0.95, bounds=None, log_scale=True, max_iter=60):
    """Invert the likelihood ratio test for a scalar parameter.

    Endpoints solve 2 (l_max - l(x)) = chi2_1 quantile, found by bisection
    between the estimate and each search bound (on the log scale by
    default). An endpoint whose bound is still inside the acceptance region
    is returned at the bound and flagged.
    """
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    crit = 0.5 * stats.chi2.ppf(level, 1)
    f = _safe(profile)
    l_max = f(estimate)
    target = l_max - crit
    to_x = np.exp if log_scale else (lambda u: u)
    from_x = np.log if log_scale else (lambda u: u)
    if bounds is None:
        bounds = (from_x(estimate) - 10.0, from_x(estimate) + 10.0) if log_scale else (estimate - 1e3, estimate + 1e3)
    centre = from_x(estimate)
    ends = []
    for edge in bounds:
        if f(to_x(edge)) >= target:
            ends.append((float(to_x(edge)), True))
            continue
        inside, outside = centre, edge
        for _ in range(max_iter):
            mid = 0.5 * (inside + outside)
            if f(to_x(mid)) >= target:
                inside = mid
            else:
                outside = mid
            if abs(outside - inside) < 1e-10:
                break
        ends.append((float(to_x(0.5 * (inside + outside))), False))
    (lo, lo_flag), (hi, hi_flag) = ends
    return ProfileInterval(float(estimate), lo, hi, level, lo_flag, hi_flag)


def profile_ci(data: DataVector, param="theta", level=0.95, nu=0.5, likelihood="ml", bounds=None):
    """Profile-likelihood confidence interval for theta or sigma^2.

    ``likelihood="ml"`` profiles the full likelihood (beta and the other
    covariance parameter maximized out); ``"reml"`` uses the restricted one.
    """
    lik = ExactLikelihood(data, nu)
    n, p = data.n, data.p
    k = n if likelihood == "ml" else n - p
    if likelihood not in ("ml", "reml"):
        raise ValueError("likelihood must be 'ml' or 'reml'")
    tb = log_theta_bounds(data.design) if bounds is None else bounds

    def prof_theta(theta):
        g = lik.gls(theta)
        extra = 0.0 if likelihood == "ml" else -0.5 * g.logdet_info
        return -0.5 * g.logdet + extra - 0.5 * k * np.log(g.S2 / k)

    theta_hat, _, _, _, _ = maximize_log_theta(prof_theta, tb)
    if param == "theta":
        return profile_interval(prof_theta, theta_hat, level, tb)
    if param != "sigma2":
        raise ValueError("param must be 'theta' or 'sigma2'")

    # log|Sigma| (+ REML term) and the GLS residual sum depend on theta only,
    # so tabulate them once and profile sigma^2 against splines in log theta.
    eta = np.linspace(tb[0], tb[1], 241)
    a_val, log_q = [], []
    for t in np.exp(eta):
        try:
            g = lik.gls(t)
        except ConditioningError:
            break
        a_val.append(-0.5 * g.logdet + (0.0 if likelihood == "ml" else -0.5 * g.logdet_info))
        log_q.append(np.log(g.S2))
    m = len(a_val)
    if m < 10:
        raise ConditioningError("correlation matrix ill-conditioned over the theta range", theta=float(np.exp(eta[0])))
    eta = eta[:m]
    a_spl = interpolate.CubicSpline(eta, a_val)
    q_spl = interpolate.CubicSpline(eta, log_q)
    fine = np.linspace(eta[0], eta[-1], 4 * m)
    a_fine, q_fine = a_spl(fine), np.exp(q_spl(fine))

    def prof_sigma2(sigma2):
        vals = a_fine - 0.5 * q_fine / sigma2
        j = int(np.argmax(vals))
        lo, hi = fine[max(j - 1, 0)], fine[min(j + 1, len(fine) - 1)]
        res = optimize.minimize_scalar(
            lambda x: -(a_spl(x) - 0.5 * np.exp(q_spl(x)) / sigma2), bounds=(lo, hi), method="bounded"
        )
        return -0.5 * k * np.log(sigma2) + max(vals[j], -float(res.fun))

    s2_hat = lik.gls(theta_hat).S2 / k
    return profile_interval(prof_sigma2, s2_hat, level, (np.log(s2_hat) - 8, np.log(s2_hat) + 8))
