"""Posterior inference for (beta, sigma^2, theta) under default priors.

The posterior factors as pi(beta | sigma^2, theta, z) pi(sigma^2 | theta, z)
pi(theta | z). The last factor is univariate and sampled exactly by a
generalized ratio-of-uniforms method on eta = log(theta); the other two are
conjugate normal and inverse-gamma draws.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import interpolate, optimize

from ._linalg import ConditioningError
from .designs import nearest_neighbor_distances
from .likelihoods import DataVector, ExactLikelihood
from .priors import TabulatedDensity, approx_ref_prior_for_design, default_theta_grid, tabulate

__all__ = [
    "LikelihoodGrid",
    "ThetaPosterior",
    "PosteriorDraws",
    "SmoothnessScan",
    "RouSampler",
    "ImproperPosteriorError",
    "likelihood_grid",
    "marginal_post_theta",
    "sample_posterior",
    "hpd_interval",
    "integrated_lik_nu",
    "replicate_rng",
]

ROU_R = 0.5
TAIL_PROBE = (10.0, 20.0)


class ImproperPosteriorError(ValueError):
    pass


def replicate_rng(seed, index=None):
    """Independent generator for (seed, index); same inputs give the same stream."""
    key = [int(seed)] if index is None else [int(seed), int(index)]
    return np.random.default_rng(np.random.SeedSequence(key))


# ---------------------------------------------------------------------------
# likelihood on a grid


@dataclass
class LikelihoodGrid:
    """Integrated log-likelihood and GLS quantities tabulated in eta = log(theta).

    Outside the tabulated range (or past a conditioning failure) every
    quantity is held at its end value: the integrated likelihood has finite
    limits as theta -> 0 and theta -> infinity, so the prior alone shapes the
    posterior tails there.
    """

    eta: np.ndarray
    loglik: np.ndarray
    log_S2: np.ndarray
    beta: np.ndarray  # (G, p)
    chol_cov: np.ndarray  # (G, p, p) lower Cholesky factors of (X^T Sigma^-1 X)^-1
    n: int
    p: int
    nu: float
    cut: Optional[float] = None
    exact: Optional[ExactLikelihood] = field(default=None, repr=False)

    def __post_init__(self):
        x = self.eta
        self._ll = interpolate.CubicSpline(x, self.loglik)
        self._s2 = interpolate.CubicSpline(x, self.log_S2)
        self._beta = interpolate.CubicSpline(x, self.beta, axis=0)
        self._chol = interpolate.CubicSpline(x, self.chol_cov.reshape(len(x), -1), axis=0)

    def _clip(self, eta):
        return np.clip(eta, self.eta[0], self.eta[-1])

    def log_lik(self, eta):
        return self._ll(self._clip(np.asarray(eta, dtype=float)))

    def conditionals(self, eta):
        """(S2, beta_hat, chol of cov_beta) at each eta, from the splines."""
        e = self._clip(np.atleast_1d(np.asarray(eta, dtype=float)))
        S2 = np.exp(self._s2(e))
        beta = self._beta(e)
        chol = np.tril(self._chol(e).reshape(-1, self.p, self.p))
        return S2, beta, chol

    def exact_conditionals(self, eta):
        e = np.atleast_1d(np.asarray(eta, dtype=float))
        S2, beta, chol = self.conditionals(e)
        for i, t in enumerate(np.exp(e)):
            if self.cut is not None and t >= self.cut:
                continue
            try:
                g = self.exact.gls(t)
            except ConditioningError:
                continue
            S2[i], beta[i], chol[i] = g.S2, g.beta, np.linalg.cholesky(g.cov_beta)
        return S2, beta, chol

    def exact_log_lik(self, eta):
        e = np.atleast_1d(np.asarray(eta, dtype=float))
        out = self.log_lik(e)
        for i, x in enumerate(e):
            if self.eta[0] <= x <= self.eta[-1] and (self.cut is None or np.exp(x) < self.cut):
                try:
                    out[i] = self.exact.integrated_loglik(float(np.exp(x)))
                except ConditioningError:
                    pass
        return out


def likelihood_grid(data: DataVector, nu, theta_grid=None, n_grid=300) -> LikelihoodGrid:
    """Tabulate the integrated likelihood on [1e-2 d_min, 1e3 d_max] (log-spaced)."""
    lik = ExactLikelihood(data, nu)
    if theta_grid is None:
        _, d_min = nearest_neighbor_distances(data.design)
        lo, hi = data.design.bounding_box
        d_max = float(np.hypot(*(hi - lo)))
        theta_grid = np.geomspace(1e-2 * d_min, 1e3 * d_max, n_grid)
    theta_grid = np.asarray(theta_grid, dtype=float)
    rows = []
    cut = None
    for t in theta_grid:
        try:
            g = lik.gls(t)
        except ConditioningError:
            cut = float(t)
            break
        ll = -0.5 * g.logdet - 0.5 * g.logdet_info - 0.5 * (data.n - data.p) * np.log(g.S2)
        rows.append((ll, np.log(g.S2), g.beta, np.linalg.cholesky(g.cov_beta)))
    if len(rows) < 10:
        raise ConditioningError("integrated likelihood could not be tabulated: covariance singular over most of the range")
    ll, ls2, beta, chol = zip(*rows)
    return LikelihoodGrid(
        np.log(theta_grid[: len(rows)]),
        np.array(ll),
        np.array(ls2),
        np.array(beta),
        np.array(chol),
        data.n,
        data.p,
        float(nu),
        cut,
        lik,
    )


def marginal_post_theta(theta, data: DataVector, prior, nu=0.5, return_flag=False):
    """log pi(theta) + log L^I(theta), unnormalized.

    With a tabulated prior, values beyond its grid come from its tail slopes
    and are flagged.
    """
    theta = np.asarray(theta, dtype=float)
    lik = ExactLikelihood(data, nu)
    ll = np.array([lik.integrated_loglik(t) for t in theta.ravel()]).reshape(theta.shape)
    val = prior.log_pdf(theta) + ll
    flag = prior.extrapolated(theta) if isinstance(prior, TabulatedDensity) else np.zeros(theta.shape, bool)
    if np.any(flag) and not return_flag:
        warnings.warn("theta outside the prior tabulation; tail extrapolation used", RuntimeWarning, stacklevel=2)
    return (val, flag) if return_flag else val


# ---------------------------------------------------------------------------
# posterior of theta


class ThetaPosterior:
    """pi(theta | z) assembled from a prior and a likelihood grid.

    ``log_target(eta)`` is the log density of eta = log(theta), i.e. including
    the Jacobian theta.
    """

    def __init__(self, grid: LikelihoodGrid, prior, exact_marginal=False):
        self.grid = grid
        self.prior = prior
        self.exact_marginal = exact_marginal
        self._check_tails()
        self._build_quadrature()

    def log_target(self, eta):
        eta = np.asarray(eta, dtype=float)
        ll = self.grid.exact_log_lik(eta) if self.exact_marginal else self.grid.log_lik(eta)
        with np.errstate(over="ignore"):
            lp = self.prior.log_pdf(np.exp(eta))
        return lp + eta + ll

    def _check_tails(self):
        lo, hi = self.grid.eta[0], self.grid.eta[-1]
        a, b = TAIL_PROBE
        up = self.log_target(np.array([hi + a, hi + b]))
        down = self.log_target(np.array([lo - a, lo - b]))
        if not up[1] < up[0]:
            raise ImproperPosteriorError("posterior of theta does not decay as theta grows; refusing to sample")
        if np.isfinite(down[0]) and not down[1] < down[0]:
            raise ImproperPosteriorError("posterior of theta does not decay as theta shrinks; refusing to sample")

    def _build_quadrature(self):
        """Fine eta grid covering where the target is within exp(-40) of its peak."""
        g = self.grid
        step = 0.02
        lo, hi = g.eta[0], g.eta[-1]
        base = np.arange(lo, hi + step, step)
        vals = self.log_target(base)
        top = np.max(vals[np.isfinite(vals)])
        while np.isfinite(vals[0]) and vals[0] > top - 40 and base[0] > lo - 60:
            ext = np.arange(base[0] - 2.0, base[0], step)
            base = np.concatenate([ext, base])
            vals = np.concatenate([self.log_target(ext), vals])
        while vals[-1] > top - 40 and base[-1] < hi + 60:
            ext = np.arange(base[-1] + step, base[-1] + 2.0 + step / 2, step)
            base = np.concatenate([base, ext])
            vals = np.concatenate([vals, self.log_target(ext)])
        top = np.max(vals[np.isfinite(vals)])
        w = np.exp(vals - top)
        mass = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(base))])
        self._q_eta = base
        self._q_logv = vals
        self._q_top = top
        self._q_cdf = mass / mass[-1]
        self.log_norm = top + np.log(mass[-1])

    def cdf(self, theta):
        return np.interp(np.log(np.asarray(theta, dtype=float)), self._q_eta, self._q_cdf)

    def log_pdf_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.log_target(np.log(theta)) - np.log(theta) - self.log_norm

    def mode_theta(self):
        """Maximizer of pi(theta | z) as a density of theta (no Jacobian)."""
        e = self._q_eta
        v = self._q_logv - e
        k = int(np.nanargmax(v))
        lo, hi = e[max(k - 1, 0)], e[min(k + 1, len(e) - 1)]
        if hi <= lo:
            return float(np.exp(e[k]))
        res = optimize.minimize_scalar(
            lambda x: -(float(self.log_target(np.array([x]))[0]) - x), bounds=(lo, hi), method="bounded", options={"xatol": 1e-8}
        )
        return float(np.exp(res.x))

    def mode_eta(self):
        k = int(np.nanargmax(self._q_logv))
        e = self._q_eta
        lo, hi = e[max(k - 1, 0)], e[min(k + 1, len(e) - 1)]
        res = optimize.minimize_scalar(
            lambda x: -float(self.log_target(np.array([x]))[0]), bounds=(lo, hi), method="bounded", options={"xatol": 1e-8}
        )
        return float(res.x)


# ---------------------------------------------------------------------------
# ratio-of-uniforms


class RouSampler:
    """Generalized ratio-of-uniforms sampler for a univariate log density.

    With relocation to the mode mu and exponent r, points (u, v) uniform on
    {0 < u <= f(v / u^r + mu)^(1/(r+1))} give x = v / u^r + mu with density
    proportional to f. The enclosing box is found numerically.
    """

    def __init__(self, log_f, mode, scan, r=ROU_R):
        self.log_f = log_f
        self.r = r
        self.mu = float(mode)
        self.log_fmax = float(log_f(np.array([self.mu]))[0])
        self.u_max = 1.0
        self.v_min, self.v_max = self._v_bounds(np.asarray(scan, dtype=float))

    def _h(self, x):
        """log of f(x)^(r/(r+1)) relative to the mode."""
        return self.r / (self.r + 1) * (self.log_f(x) - self.log_fmax)

    def _v_bounds(self, scan):
        bounds = []
        for sign, side in ((-1, scan[scan < self.mu]), (1, scan[scan > self.mu])):
            if side.size == 0:
                raise RuntimeError("ratio-of-uniforms box search failed: empty side")
            vals = np.abs(side - self.mu) * np.exp(self._h(side))
            vals = np.where(np.isfinite(vals), vals, 0.0)
            k = int(np.argmax(vals))
            outer = 0 if sign < 0 else side.size - 1
            if k == outer and vals[k] > 0:
                raise RuntimeError(
                    f"ratio-of-uniforms box search failed: |v| still growing at x={side[k]:.4g} (tail too heavy)"
                )
            lo = side[max(k - 1, 0)]
            hi = side[min(k + 1, side.size - 1)]
            res = optimize.minimize_scalar(
                lambda x: -abs(x - self.mu) * float(np.exp(self._h(np.array([x]))[0])),
                bounds=(min(lo, hi), max(lo, hi)),
                method="bounded",
                options={"xatol": 1e-10},
            )
            best = max(-float(res.fun), float(vals[k]))
            bounds.append(sign * best * 1.0001)
        return bounds[0], bounds[1]

    @property
    def box_area_ratio(self):
        return self.u_max * (self.v_max - self.v_min)

    def sample(self, n, rng, batch=None):
        out = np.empty(n)
        got = 0
        proposed = 0
        batch = batch or max(64, int(1.5 * n))
        inv = 1.0 / (self.r + 1)
        while got < n:
            u = rng.uniform(0.0, self.u_max, batch)
            v = rng.uniform(self.v_min, self.v_max, batch)
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                x = v / u**self.r + self.mu
                lf = self.log_f(x) - self.log_fmax
                ok = (u > 0) & np.isfinite(x) & (np.log(u) <= inv * lf)
            acc = x[ok]
            # count proposals up to the n-th acceptance so the rate does not depend on batch size
            if got + acc.size >= n:
                need = n - got
                last = np.flatnonzero(ok)[need - 1]
                proposed += last + 1
                out[got:] = acc[:need]
                got = n
            else:
                proposed += batch
                out[got : got + acc.size] = acc
                got += acc.size
        return out, n / proposed


# ---------------------------------------------------------------------------
# draws and summaries


def hpd_interval(draws, level=0.95):
    """Shortest interval containing ``level`` of the sorted draws."""
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = x.size
    if n < 100:
        raise ValueError(f"need at least 100 draws, got {n}")
    k = int(np.ceil(level * n))
    widths = x[k - 1 :] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


@dataclass(frozen=True)
class PosteriorDraws:
    beta: np.ndarray
    sigma2: np.ndarray
    theta: np.ndarray
    seed: Optional[int]
    acceptance_rate: float
    prior_kind: str
    theta_mode: float = np.nan
    prior_digest: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self):
        return self.theta.size

    def summary(self, level=0.95):
        lo_t, hi_t = hpd_interval(self.theta, level)
        lo_s, hi_s = hpd_interval(self.sigma2, level)
        return {
            "prior": self.prior_kind,
            "n_draws": int(self.n_draws),
            "seed": self.seed,
            "acceptance_rate": float(self.acceptance_rate),
            "theta_mode": float(self.theta_mode),
            "theta_median": float(np.median(self.theta)),
            "theta_hpd": [lo_t, hi_t],
            "sigma2_median": float(np.median(self.sigma2)),
            "sigma2_mean": float(np.mean(self.sigma2)),
            "sigma2_hpd": [lo_s, hi_s],
            "beta_mean": np.mean(self.beta, axis=0).tolist(),
            "beta_sd": np.std(self.beta, axis=0, ddof=1).tolist(),
            "level": level,
            "prior_digest": self.prior_digest,
        }

    def to_csv(self, path=None):
        p = self.beta.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"beta_{j + 1}" for j in range(p)] + ["sigma2", "theta"])
        for b, s, t in zip(self.beta, self.sigma2, self.theta):
            w.writerow([f"{x:.10g}" for x in b] + [f"{s:.10g}", f"{t:.10g}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_json(self, path=None, level=0.95):
        text = json.dumps(self.summary(level), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _prior_kind(prior):
    return getattr(prior, "kind", "custom")


def _prior_digest(prior):
    d = getattr(prior, "digest", None)
    return d() if callable(d) else ""


def posterior_theta(data: DataVector, prior, nu=0.5, grid: Optional[LikelihoodGrid] = None, exact_marginal=False):
    grid = grid or likelihood_grid(data, nu)
    return ThetaPosterior(grid, prior, exact_marginal)


def sample_posterior(
    data: DataVector,
    prior,
    n_draws=10_000,
    seed=0,
    nu=0.5,
    grid: Optional[LikelihoodGrid] = None,
    exact_marginal=False,
    rng=None,
) -> PosteriorDraws:
    """Independent draws of (beta, sigma^2, theta) from the posterior.

    ``prior`` needs ``log_pdf(theta)``: a :class:`TabulatedDensity` or an
    :class:`InverseGammaPrior`. ``grid`` lets several priors share one
    tabulation of the integrated likelihood.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be at least 1")
    post = posterior_theta(data, prior, nu, grid, exact_marginal)
    rng = rng if rng is not None else replicate_rng(seed)
    mode = post.mode_eta()
    scan = np.concatenate([post._q_eta, [post._q_eta[0] - 40, post._q_eta[-1] + 40]])
    sampler = RouSampler(post.log_target, mode, np.sort(scan))
    eta, rate = sampler.sample(n_draws, rng)
    g = post.grid
    S2, beta_hat, chol = g.exact_conditionals(eta) if exact_marginal else g.conditionals(eta)
    k = g.n - g.p
    # sigma^2 | theta ~ IG(k/2, S2/2)
    sigma2 = (S2 / 2.0) / rng.gamma(k / 2.0, 1.0, size=n_draws)
    eps = rng.standard_normal((n_draws, g.p))
    beta = beta_hat + np.sqrt(sigma2)[:, None] * np.einsum("nij,nj->ni", chol, eps)
    return PosteriorDraws(
        beta,
        sigma2,
        np.exp(eta),
        seed,
        float(rate),
        _prior_kind(prior),
        post.mode_theta(),
        _prior_digest(prior),
        {"exact_marginal": exact_marginal, "box": [sampler.u_max, sampler.v_min, sampler.v_max]},
    )


# ---------------------------------------------------------------------------
# smoothness selection


@dataclass(frozen=True)
class SmoothnessScan:
    nu_grid: np.ndarray
    log_m: np.ndarray
    log_C: np.ndarray  # log C(nu), C = 1 / integral of the unnormalized prior (nan when divergent)
    flagged: np.ndarray
    tuning: list = field(default_factory=list)

    @property
    def nu_hat(self):
        ok = ~self.flagged & np.isfinite(self.log_m)
        if not ok.any():
            return float("nan")
        return float(self.nu_grid[ok][np.argmax(self.log_m[ok])])

    def to_csv(self, path=None):
        buf = io.StringIO()
        buf.write("nu,log_m,log_C,flagged\n")
        for row in zip(self.nu_grid, self.log_m, self.log_C, self.flagged):
            buf.write(f"{row[0]:.6g},{row[1]:.10g},{row[2]:.10g},{int(row[3])}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _log_trapz(logv, x):
    top = np.max(logv)
    w = np.exp(logv - top)
    return top + np.log(np.trapezoid(w, x))


def integrated_lik_nu(
    nu_grid: Sequence[float],
    data: DataVector,
    m1=None,
    m2=None,
    delta=None,
    truncation=5,
    n_grid=300,
    regularity=None,
) -> SmoothnessScan:
    """log m(z | nu) = log of the integral of pi^AR(theta | nu) L^I(theta; z, nu).

    The approximate reference prior is normalized per nu, so its constant
    C(nu) enters. Unless fixed, the auxiliary grid is re-tuned for every nu.
    Both factors are integrated over the likelihood grid extended so the
    integrand has decayed, with the likelihood held constant past the grid.
    """
    nu_grid = np.asarray(nu_grid, dtype=float)
    _, d_min = nearest_neighbor_distances(data.design)
    log_m, log_C, flagged, tuning = [], [], [], []
    for nu in nu_grid:
        prior_eval = approx_ref_prior_for_design(data.design, nu, m1, m2, delta, truncation, regularity)
        spec = getattr(prior_eval, "spectral", None) or prior_eval.basis.spectral
        tuning.append({"nu": float(nu), "m1": spec.m1, "m2": spec.m2, "delta": spec.delta})
        prior = tabulate(prior_eval, default_theta_grid(d_min))
        if not prior.is_normalized:
            log_m.append(np.nan)
            log_C.append(np.nan)
            flagged.append(True)
            continue
        grid = likelihood_grid(data, nu, n_grid=n_grid)
        try:
            post = ThetaPosterior(grid, prior)
        except ImproperPosteriorError:
            log_m.append(np.nan)
            log_C.append(float(-np.log(prior.normalization)))
            flagged.append(True)
            continue
        log_m.append(float(post.log_norm))
        log_C.append(float(-np.log(prior.normalization)))
        flagged.append(False)
    return SmoothnessScan(nu_grid, np.array(log_m), np.array(log_C), np.array(flagged), tuning)
