"""Simulation of Gaussian random fields, coverage experiments and semivariograms."""

from __future__ import annotations

import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from ._linalg import ConditioningError, guarded_cholesky
from .bayes import ImproperPosteriorError, hpd_interval, likelihood_grid, replicate_rng, sample_posterior
from .covmodel import MaternParams, matern_corr
from .designs import SpatialDesign, constant_trend, nearest_neighbor_distances, quadratic_trend, regular_grid_design
from .likelihoods import DataVector, profile_ci
from .priors import ExactRefPrior, InverseGammaPrior, approx_ref_prior_for_design, default_theta_grid, tabulate

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "SemivariogramFit",
    "QUADRATIC_BETA",
    "simulate_grf",
    "coverage_experiment",
    "empirical_semivariogram",
    "coverage_estimates",
]

QUADRATIC_BETA = (0.15, -0.65, -0.1, 0.9, -1.0, 1.2)
PRIOR_KINDS = ("exact", "approx", "ig")


def simulate_grf(design: SpatialDesign, params: MaternParams, seed=0, beta=None, index=None, rng=None) -> DataVector:
    """z = X beta + sigma L eta with L the Cholesky factor of the correlation matrix."""
    rng = rng if rng is not None else replicate_rng(seed, index)
    beta = np.zeros(design.p) if beta is None else np.asarray(beta, dtype=float)
    L = guarded_cholesky(matern_corr(design.distances(), MaternParams(1.0, params.theta, params.nu)), params.theta)
    z = design.covariates @ beta + np.sqrt(params.sigma2) * (L @ rng.standard_normal(design.n))
    return DataVector(z, design)


# ---------------------------------------------------------------------------
# semivariogram


@dataclass(frozen=True)
class SemivariogramFit:
    centers: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray
    sigma2: float
    theta: float
    nu: float

    def model(self, r):
        r = np.asarray(r, dtype=float)
        if self.sigma2 == 0:
            return np.zeros_like(r)
        return self.sigma2 * (1 - matern_corr(r, MaternParams(1.0, self.theta, self.nu)))

    def to_csv(self, path=None):
        buf = io.StringIO()
        buf.write("distance,semivariance,pairs,fitted\n")
        for c, g, k, f in zip(self.centers, self.gamma, self.counts, self.model(self.centers)):
            buf.write(f"{c:.10g},{g:.10g},{int(k)},{f:.10g}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def empirical_semivariogram(data: DataVector, bins=15, nu=0.5, max_dist=None) -> SemivariogramFit:
    """Matheron estimator on equal-width bins and a least-squares Matérn fit.

    Non-constant means are removed by ordinary least squares first. For a
    fixed range the best variance is linear least squares, so only the range
    is searched numerically. Empty bins are dropped.
    """
    design = data.design
    if design.n < 10:
        raise ValueError("need at least 10 locations")
    z = data.z
    if design.p > 1:
        beta, *_ = np.linalg.lstsq(design.covariates, z, rcond=None)
        z = z - design.covariates @ beta
    D = design.distances()
    iu = np.triu_indices(design.n, k=1)
    h = D[iu]
    sq = 0.5 * (z[iu[0]] - z[iu[1]]) ** 2
    max_dist = 0.5 * h.max() if max_dist is None else float(max_dist)
    edges = np.linspace(0.0, max_dist, int(bins) + 1)
    which = np.digitize(h, edges[1:-1], right=True)  # bins are (a, b]
    keep = h <= max_dist
    counts = np.bincount(which[keep], minlength=bins)
    sums = np.bincount(which[keep], weights=sq[keep], minlength=bins)
    dsum = np.bincount(which[keep], weights=h[keep], minlength=bins)
    ok = counts > 0
    centers = dsum[ok] / counts[ok]
    gamma = sums[ok] / counts[ok]
    counts = counts[ok]

    def sse(log_theta):
        g = 1 - matern_corr(centers, MaternParams(1.0, float(np.exp(log_theta)), nu))
        s2 = max(float(g @ gamma) / float(g @ g), 0.0)
        return float(np.sum((gamma - s2 * g) ** 2)), s2

    if np.all(gamma == 0):
        return SemivariogramFit(centers, gamma, counts, 0.0, float(np.median(centers)), nu)
    _, d_min = nearest_neighbor_distances(design)
    lo, hi = np.log(d_min / 10), np.log(10 * h.max())
    scan = np.linspace(lo, hi, 81)
    vals = [sse(x)[0] for x in scan]
    k = int(np.argmin(vals))
    a, b = scan[max(k - 1, 0)], scan[min(k + 1, len(scan) - 1)]
    res = optimize.minimize_scalar(lambda x: sse(x)[0], bounds=(a, b), method="bounded", options={"xatol": 1e-8})
    log_theta = float(res.x) if res.fun <= vals[k] else float(scan[k])
    return SemivariogramFit(centers, gamma, counts, sse(log_theta)[1], float(np.exp(log_theta)), nu)


# ---------------------------------------------------------------------------
# coverage experiment


@dataclass(frozen=True)
class ExperimentConfig:
    """One scenario of the frequentist study.

    ``design`` is ``"regular"`` (a k x k grid on the unit square, k = sqrt(n))
    or an (n, 2) array of locations. ``mean`` is ``"constant"`` (beta = 1)
    or ``"quadratic"`` (the six-term trend in QUADRATIC_BETA).
    """

    design: object = "regular"
    n: int = 100
    mean: str = "constant"
    sigma2: float = 1.0
    theta: float = 0.2
    nu: float = 0.5
    priors: tuple = ("exact", "approx")
    mle: bool = False
    replicates: int = 300
    n_draws: int = 2000
    level: float = 0.95
    seed: int = 20240101
    m1: Optional[int] = None
    delta: Optional[float] = None
    ig_shape: float = 0.5
    ig_scale: float = float(np.sqrt(2) / 100)
    n_grid: int = 300
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not 0 < self.level < 1:
            raise ValueError("level must be in (0, 1)")
        if self.mean not in ("constant", "quadratic"):
            raise ValueError("mean must be 'constant' or 'quadratic'")
        bad = set(self.priors) - set(PRIOR_KINDS)
        if bad:
            raise ValueError(f"unknown priors {sorted(bad)}")

    def build_design(self) -> SpatialDesign:
        trend = constant_trend if self.mean == "constant" else quadratic_trend
        if isinstance(self.design, str):
            if self.design != "regular":
                raise ValueError("design must be 'regular' or an array of locations")
            k = int(round(np.sqrt(self.n)))
            if k * k != self.n:
                raise ValueError("regular design needs a square n")
            return regular_grid_design(k, 1.0, trend)
        return SpatialDesign.from_trend(np.asarray(self.design, dtype=float), trend)

    @property
    def beta(self):
        return np.array([1.0]) if self.mean == "constant" else np.array(QUADRATIC_BETA)

    def to_dict(self):
        d = asdict(self)
        if not isinstance(self.design, str):
            d["design"] = f"array({np.asarray(self.design).shape[0]} sites)"
        return d


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    summary: dict
    records: list
    failures: int
    wall_clock: float

    def to_json(self, path=None):
        text = json.dumps(
            {
                "config": self.config.to_dict(),
                "summary": self.summary,
                "failures": self.failures,
                "failure_fraction": self.failures / self.config.replicates,
                "wall_clock": self.wall_clock,
            },
            indent=2,
            default=float,
        )
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_csv(self, path=None):
        c = self.config
        buf = io.StringIO()
        buf.write("method,mean,theta,nu,coverage_theta,loglength_theta,mae_theta,coverage_sigma2,loglength_sigma2,mae_sigma2,n_ok\n")
        for name, s in self.summary.items():
            buf.write(
                f"{name},{c.mean},{c.theta:g},{c.nu:g},{s['coverage_theta']:.4f},{s['loglength_theta']:.4f},"
                f"{s['mae_theta']:.4f},{s['coverage_sigma2']:.4f},{s['loglength_sigma2']:.4f},{s['mae_sigma2']:.4f},{s['n_ok']}\n"
            )
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def coverage_estimates(lower, upper, truth):
    """Indicator-average coverage and mean log-length of interval records."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    return float(np.mean((lower < truth) & (truth < upper))), float(np.mean(np.log(upper) - np.log(lower)))


def _build_priors(config: ExperimentConfig, design: SpatialDesign):
    _, d_min = nearest_neighbor_distances(design)
    grid = default_theta_grid(d_min)
    out = {}
    for kind in config.priors:
        if kind == "exact":
            out[kind] = tabulate(ExactRefPrior(design, config.nu), grid)
        elif kind == "approx":
            out[kind] = tabulate(approx_ref_prior_for_design(design, config.nu, config.m1, None, config.delta), grid)
        else:
            out[kind] = InverseGammaPrior(config.ig_shape, config.ig_scale)
    return out


def _one_replicate(args):
    config, design, priors, index = args
    rec = {"index": index}
    try:
        rng = replicate_rng(config.seed, index)
        data = simulate_grf(design, MaternParams(config.sigma2, config.theta, config.nu), beta=config.beta, rng=rng)
        grid = likelihood_grid(data, config.nu, n_grid=config.n_grid)
        for kind, prior in priors.items():
            dr = sample_posterior(data, prior, config.n_draws, nu=config.nu, grid=grid, rng=rng)
            rec[kind] = {
                "theta_hpd": hpd_interval(dr.theta, config.level),
                "sigma2_hpd": hpd_interval(dr.sigma2, config.level),
                "theta_hat": dr.theta_mode,
                "sigma2_hat": float(np.median(dr.sigma2)),
                "acceptance": dr.acceptance_rate,
            }
        if config.mle:
            ci_t = profile_ci(data, "theta", config.level, config.nu)
            ci_s = profile_ci(data, "sigma2", config.level, config.nu)
            rec["mle"] = {
                "theta_hpd": (ci_t.lower, ci_t.upper),
                "sigma2_hpd": (ci_s.lower, ci_s.upper),
                "theta_hat": ci_t.estimate,
                "sigma2_hat": ci_s.estimate,
                "flagged": bool(ci_t.lower_flagged or ci_t.upper_flagged),
            }
    except (ConditioningError, ImproperPosteriorError, RuntimeError, np.linalg.LinAlgError) as err:
        rec["error"] = f"{type(err).__name__}: {err}"
    return rec


def coverage_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Frequentist coverage, log-length and MAE of interval/point estimates.

    Each replicate uses its own random stream keyed by (seed, index), so the
    report does not depend on the number of workers or completion order.
    """
    t0 = time.perf_counter()
    design = config.build_design()
    priors = _build_priors(config, design)
    jobs = [(config, design, priors, i) for i in range(config.replicates)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            records = list(pool.map(_one_replicate, jobs, chunksize=4))
    else:
        records = [_one_replicate(j) for j in jobs]
    records.sort(key=lambda r: r["index"])
    ok = [r for r in records if "error" not in r]
    methods = list(priors) + (["mle"] if config.mle else [])
    summary = {}
    for m in methods:
        rows = [r[m] for r in ok]
        if not rows:
            continue
        th = np.array([r["theta_hpd"] for r in rows])
        s2 = np.array([r["sigma2_hpd"] for r in rows])
        cov_t, len_t = coverage_estimates(th[:, 0], th[:, 1], config.theta)
        cov_s, len_s = coverage_estimates(s2[:, 0], s2[:, 1], config.sigma2)
        summary[m] = {
            "coverage_theta": cov_t,
            "loglength_theta": len_t,
            "mae_theta": float(np.mean([abs(r["theta_hat"] - config.theta) for r in rows])),
            "coverage_sigma2": cov_s,
            "loglength_sigma2": len_s,
            "mae_sigma2": float(np.mean([abs(r["sigma2_hat"] - config.sigma2) for r in rows])),
            "n_ok": len(rows),
        }
        if m != "mle":
            summary[m]["mean_acceptance"] = float(np.mean([r["acceptance"] for r in rows]))
    return ExperimentReport(config, summary, records, len(records) - len(ok), time.perf_counter() - t0)
