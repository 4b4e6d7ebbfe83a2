"""Exact and spectrally approximated reference priors for the range parameter.

Every prior here is known only up to a constant. Evaluators return the
unnormalized value; :class:`TabulatedDensity` turns a tabulation on a
log-spaced grid into a normalized density with power-law tails.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import interpolate, special

from ._linalg import ConditioningError, guarded_cholesky, orthonormal_complement, tri_solve
from .covmodel import AliasConfig, AliasedSpectrum, MaternParams, SpectralFamily, matern_corr, matern_dcorr_dtheta, matern_family
from .designs import (
    SpatialDesign,
    SpectralDesign,
    build_aux_grid,
    build_spectral_design,
    nearest_neighbor_distances,
    tune_defaults,
)
from .spectral_basis import SpectralBasis, build_H1, build_X1, layout_spectrum

__all__ = [
    "ContrastProjector",
    "build_contrast_projector",
    "ExactRefPrior",
    "ApproxRefPriorConst",
    "ApproxRefPriorGeneral",
    "InverseGammaPrior",
    "TabulatedDensity",
    "exact_ref_prior",
    "approx_ref_prior_const",
    "approx_ref_prior_general",
    "approx_ref_prior_for_design",
    "default_theta_grid",
    "tabulate",
    "normalize",
    "tail_diagnostic",
    "trace_form",
]

TAIL_MARGIN = 0.1


# ---------------------------------------------------------------------------
# error contrasts


@dataclass(frozen=True)
class ContrastProjector:
    """W with W^T W = I and X^T W = 0, the last n - p left singular vectors of X."""

    W: np.ndarray

    def project(self, z):
        return self.W.T @ z


def build_contrast_projector(design_or_X) -> ContrastProjector:
    X = design_or_X.covariates if isinstance(design_or_X, SpatialDesign) else np.atleast_2d(design_or_X)
    if X.shape[0] <= X.shape[1]:
        raise ValueError("need more rows than columns")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("design matrix X is rank deficient")
    return ContrastProjector(orthonormal_complement(X))


def trace_form(psi_trace, psi_frob2, dof):
    """sqrt(tr(Psi^2) - tr(Psi)^2 / dof), clipped at zero."""
    return np.sqrt(max(psi_frob2 - psi_trace**2 / dof, 0.0))


def _centered_trace_form(Psi):
    """Same as trace_form for a symmetric Psi, without the cancellation."""
    k = Psi.shape[0]
    C = Psi - (np.trace(Psi) / k) * np.eye(k)
    return float(np.sqrt(np.sum(C * C)))


# ---------------------------------------------------------------------------
# exact reference prior


class ExactRefPrior:
    """Exact reference prior of the range for a fixed design and smoothness.

    Representation ``"a"`` whitens with the Cholesky factor L of Sigma and
    projects onto the complement of L^{-1} X; ``"b"`` works with the error
    contrasts W^T z directly. Both cost O(n^3) per evaluation.
    """

    kind = "exact"

    def __init__(self, design: SpatialDesign, nu: float, representation: str = "a"):
        if representation not in ("a", "b"):
            raise ValueError(f"representation must be 'a' or 'b', got {representation!r}")
        self.design = design
        self.nu = float(nu)
        self.representation = representation
        self._dist = design.distances()
        self._W = build_contrast_projector(design).W if representation == "b" else None

    def matrices(self, theta):
        params = MaternParams(1.0, float(theta), self.nu)
        return matern_corr(self._dist, params), matern_dcorr_dtheta(self._dist, params)

    def _psi(self, theta):
        S, dS = self.matrices(theta)
        if self.representation == "a":
            L = guarded_cholesky(S, theta)
            B = tri_solve(L, tri_solve(L, dS).T)  # L^{-1} dS L^{-T}
            N = orthonormal_complement(tri_solve(L, self.design.covariates))
            return N.T @ B @ N
        W = self._W
        Lw = guarded_cholesky(W.T @ S @ W, theta)
        D = W.T @ dS @ W
        return tri_solve(Lw, tri_solve(Lw, D).T)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.array([_centered_trace_form(_sym(self._psi(t))) for t in theta.ravel()])
        return out.reshape(theta.shape) if theta.ndim else float(out[0])


def _sym(A):
    return 0.5 * (A + A.T)


def exact_ref_prior(theta, design: SpatialDesign, nu, representation="a"):
    return ExactRefPrior(design, nu, representation)(theta)


# ---------------------------------------------------------------------------
# approximate reference priors


class ApproxRefPriorConst:
    """Matrix-free approximate reference prior for a constant mean.

    The value is the root sum of squared deviations of the range derivative
    of the log aliased spectral density over the M - 1 non-origin layout
    frequencies. ``include_all`` uses every frequency of the spectral design
    except the origin instead, which only changes the value by a constant
    factor on isotropic models.
    """

    kind = "approx"

    def __init__(self, spectral: SpectralDesign, family: SpectralFamily, alias: AliasConfig, include_all=False):
        self.spectral = spectral
        self.family = family
        self.alias = alias
        self.include_all = include_all
        if include_all:
            idx = spectral.indices
            omega = spectral.frequencies_of(idx[np.any(idx != 0, axis=1)])
        else:
            omega = layout_spectrum(spectral, family, alias).omega[1:]
        self._spec = AliasedSpectrum(omega, family, alias)

    def gamma(self, theta):
        return self._spec.dlog(theta)

    def _one(self, theta):
        g = self.gamma(theta)
        return float(np.sqrt(np.sum((g - g.mean()) ** 2)))

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.array([self._one(t) for t in theta.ravel()])
        return out.reshape(theta.shape) if theta.ndim else float(out[0])


class ApproxRefPriorGeneral:
    """Approximate reference prior for a general mean, from a diagonal spectrum.

    With A = Lambda^{-1/2} X1, Q an orthonormal basis of its range, H = QQ^T
    with diagonal h, and gamma the range derivative of log Lambda, the
    matrix Psi = diag(gamma)(I - H) has tr Psi = sum gamma_i (1 - h_i) and
    tr Psi^2 = sum gamma_i^2 (1 - h_i) - ||(I - H) diag(gamma) Q||_F^2.
    Both terms are nonnegative, so small priors at large ranges do not come
    from cancelling large numbers. The value is invariant to shifting gamma,
    and the shift is chosen to make tr Psi vanish.
    """

    kind = "approx"

    def __init__(self, basis: SpectralBasis, family: SpectralFamily, alias: AliasConfig):
        if basis.X1 is None:
            raise ValueError("basis has no X1; call build_X1 first")
        self.basis = basis
        self.family = family
        self.alias = alias
        self._spec = layout_spectrum(basis.spectral, family, alias)
        self.X1 = basis.X1
        self.dof = basis.M - basis.X1.shape[1]

    def _one(self, theta):
        logf = self._spec.log_density(theta)
        g = self._spec.dlog(theta)
        A = self.X1 * np.exp(-0.5 * (logf - logf.max()))[:, None]
        Q, R = np.linalg.qr(A)
        if np.min(np.abs(np.diag(R))) <= 1e-12 * np.max(np.abs(np.diag(R))):
            raise ConditioningError(f"X1^T Lambda^-1 X1 singular at theta={theta:.6g}", theta)
        h = np.sum(Q * Q, axis=1)
        # shifting by tr(Psi)/dof makes tr(Psi) vanish and avoids cancellation
        g = g - np.sum(g * (1 - h)) / self.dof
        tr1 = float(np.sum(g * (1 - h)))
        gQ = g[:, None] * Q
        leak = gQ - Q @ (Q.T @ gQ)
        tr2 = float(np.sum(g * g * (1 - h)) - np.sum(leak * leak))
        return trace_form(tr1, tr2, self.dof)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.array([self._one(t) for t in theta.ravel()])
        return out.reshape(theta.shape) if theta.ndim else float(out[0])


def approx_ref_prior_const(theta, spectral: SpectralDesign, params_or_family, alias: AliasConfig, include_all=False):
    family = _family_of(params_or_family)
    return ApproxRefPriorConst(spectral, family, alias, include_all)(theta)


def approx_ref_prior_general(theta, basis: SpectralBasis, params_or_family, alias: AliasConfig):
    return ApproxRefPriorGeneral(basis, _family_of(params_or_family), alias)(theta)


def _family_of(obj):
    if isinstance(obj, SpectralFamily):
        return obj
    if isinstance(obj, MaternParams):
        return obj.family
    return matern_family(float(obj))


def _is_constant_mean(design: SpatialDesign):
    X = design.covariates
    return X.shape[1] == 1 and np.allclose(X[:, 0], X[0, 0]) and X[0, 0] != 0


def approx_ref_prior_for_design(design: SpatialDesign, nu, m1=None, m2=None, delta=None, truncation=5, regularity=None):
    """Approximate prior evaluator for a design, tuning the grid when not given.

    Constant-mean models use the matrix-free form; otherwise the covariates
    are evaluated on the auxiliary grid through ``design.trend``.
    """
    if m1 is None or delta is None:
        rep = tune_defaults(design, regularity=regularity, nu=nu)
        m1 = rep.m1 if m1 is None else m1
        m2 = rep.m2 if m2 is None else m2
        delta = rep.delta if delta is None else delta
    m2 = m1 if m2 is None else m2
    spectral = build_spectral_design(m1, m2, delta)
    alias = AliasConfig(delta, truncation)
    family = matern_family(nu)
    if _is_constant_mean(design):
        return ApproxRefPriorConst(spectral, family, alias)
    if design.trend is None:
        raise ValueError("a non-constant mean needs design.trend to evaluate covariates on the grid")
    lo, hi = design.bounding_box
    hi = np.maximum(hi, lo + delta * (np.array([m1, m2]) - 1))
    grid = build_aux_grid((lo, hi), m1, m2, delta)
    basis = build_X1(build_H1(grid, spectral), design.trend)
    return ApproxRefPriorGeneral(basis, family, alias)


# ---------------------------------------------------------------------------
# inverse-gamma baseline


@dataclass(frozen=True)
class InverseGammaPrior:
    shape: float = 0.5
    scale: float = np.sqrt(2) / 100
    kind: str = "inverse-gamma"

    def log_pdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore"):
            return (
                self.shape * np.log(self.scale)
                - special.gammaln(self.shape)
                - (self.shape + 1) * np.log(theta)
                - self.scale / theta
            )

    def pdf(self, theta):
        return np.exp(self.log_pdf(theta))

    def digest(self):
        return hashlib.sha256(f"ig:{self.shape!r}:{self.scale!r}".encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# tabulated densities


def default_theta_grid(d_min, n=200, lo=1e-2, hi=1e3):
    return np.geomspace(lo * d_min, hi * d_min, n)


def _loglog_slope(theta, logv):
    x = np.log(theta)
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, logv, rcond=None)
    return float(coef[0])


@dataclass(frozen=True)
class TabulatedDensity:
    """Unnormalized density of the range on a strictly increasing grid.

    ``support`` bounds where the density may be nonzero; with an unbounded
    support the mass beyond the grid is added analytically from the log-log
    slopes of the first and last decades. ``normalization`` is the integral
    of the unnormalized values (so the density is values / normalization),
    or None when improper or not yet computed.
    """

    theta: np.ndarray
    values: np.ndarray
    kind: str = "custom"
    normalization: Optional[float] = None
    support: tuple = (0.0, np.inf)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValueError("theta and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(t) <= 0) or t[0] <= 0:
            raise ValueError("theta grid must be positive and strictly increasing")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError("density values must be finite and nonnegative")
        object.__setattr__(self, "theta", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_cache", {})

    @property
    def log_values(self):
        with np.errstate(divide="ignore"):
            return np.log(self.values)

    @property
    def is_normalized(self):
        return self.normalization is not None

    # -- tails ------------------------------------------------------------

    def _decade(self, upper):
        """Points used for the tail slopes.

        The upper tail uses the last decade. The lower tail uses only the
        first few points, since priors can be non-monotone a decade above
        their lower grid edge.
        """
        t = self.theta
        if upper:
            mask = t >= t[-1] / 10
        else:
            mask = np.zeros(t.size, dtype=bool)
            mask[: max(3, t.size // 50)] = True
        return mask & (self.values > 0)

    def tail_slopes(self):
        if "slopes" not in self._cache:
            self._cache["slopes"] = self._tail_slopes()
        return self._cache["slopes"]

    def _tail_slopes(self):
        out = []
        for upper in (False, True):
            m = self._decade(upper)
            out.append(_loglog_slope(self.theta[m], self.log_values[m]) if m.sum() >= 2 else np.nan)
        return tuple(out)

    def _tail_masses(self):
        lo_slope, hi_slope = self.tail_slopes()
        t, v = self.theta, self.values
        lower = 0.0
        if self.support[0] < t[0] and v[0] > 0:
            if not lo_slope > -1:
                return None
            lower = v[0] * t[0] / (lo_slope + 1) * (1 - (self.support[0] / t[0]) ** (lo_slope + 1))
        upper = 0.0
        if self.support[1] > t[-1] and v[-1] > 0:
            if np.isinf(self.support[1]):
                if not hi_slope < -1:
                    return None
                upper = v[-1] * t[-1] / (-hi_slope - 1)
            else:
                r = self.support[1] / t[-1]
                s1 = hi_slope + 1
                upper = v[-1] * t[-1] * (np.log(r) if abs(s1) < 1e-12 else (r**s1 - 1) / s1)
        return lower, upper

    # -- evaluation ---------------------------------------------------------

    def _interp(self):
        if "interp" not in self._cache:
            x = np.log(self.theta)
            if np.all(self.values > 0):
                self._cache["interp"] = (interpolate.PchipInterpolator(x, self.log_values, extrapolate=False), True)
            else:
                self._cache["interp"] = (interpolate.PchipInterpolator(x, self.values, extrapolate=False), False)
        return self._cache["interp"]

    def unnormalized_log_pdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        f, in_log = self._interp()
        x = np.log(np.maximum(theta, np.finfo(float).tiny))
        with np.errstate(divide="ignore"):
            y = f(x) if in_log else np.log(np.maximum(f(x), 0.0))
        lo_slope, hi_slope = self.tail_slopes()
        t = self.theta
        lv = self.log_values
        below = theta < t[0]
        above = theta > t[-1]
        y = np.where(below, lv[0] + lo_slope * (x - np.log(t[0])), y)
        y = np.where(above, lv[-1] + hi_slope * (x - np.log(t[-1])), y)
        outside = (theta <= self.support[0]) | (theta > self.support[1])
        return np.where(outside, -np.inf, y)

    def log_pdf(self, theta):
        """Log density; normalized when the normalization is known."""
        y = self.unnormalized_log_pdf(theta)
        return y - np.log(self.normalization) if self.is_normalized else y

    def pdf(self, theta):
        return np.exp(self.log_pdf(theta))

    def extrapolated(self, theta):
        theta = np.asarray(theta, dtype=float)
        return (theta < self.theta[0]) | (theta > self.theta[-1])

    # -- io -----------------------------------------------------------------

    def density_values(self):
        return self.values / self.normalization if self.is_normalized else self.values

    def to_csv(self, path=None):
        dens = self.density_values()
        buf = io.StringIO()
        buf.write("theta,density,log_density\n")
        with np.errstate(divide="ignore"):
            logd = np.log(dens)
        for t, d, ld in zip(self.theta, dens, logd):
            buf.write(f"{t:.10g},{d:.10g},{ld:.10g}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_json(self, path=None):
        lo_slope, hi_slope = self.tail_slopes()
        obj = {
            "kind": self.kind,
            "normalization": self.normalization,
            "support": [self.support[0], None if np.isinf(self.support[1]) else self.support[1]],
            "tail_slopes": [lo_slope, hi_slope],
            "digest": self.digest(),
            "meta": self.meta,
            "theta": self.theta.tolist(),
            "values": self.values.tolist(),
        }
        text = json.dumps(obj, indent=2, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        sup = obj.get("support", [0.0, None])
        return cls(
            np.array(obj["theta"]),
            np.array(obj["values"]),
            obj.get("kind", "custom"),
            obj.get("normalization"),
            (sup[0], np.inf if sup[1] is None else sup[1]),
            obj.get("meta", {}),
        )

    def digest(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.theta).tobytes())
        h.update(np.ascontiguousarray(self.values).tobytes())
        return h.hexdigest()[:16]


def normalize(density: TabulatedDensity) -> TabulatedDensity:
    """Attach the normalizing integral; improper densities get None.

    The tabulated part uses the trapezoid rule in log(theta) on values*theta;
    the parts beyond the grid use the fitted power-law tails. An upper tail
    judged improper by :func:`tail_diagnostic` leaves the density unnormalized.
    """
    tails = density._tail_masses()
    meta = dict(density.meta)
    if tails is None or tail_diagnostic(density)["verdict"] == "improper":
        meta["propriety"] = "improper"
        return replace(density, normalization=None, meta=meta)
    body = float(np.trapezoid(density.values * density.theta, np.log(density.theta)))
    total = body + tails[0] + tails[1]
    if not total > 0:
        meta["propriety"] = "degenerate"
        return replace(density, normalization=None, meta=meta)
    meta.update(propriety="proper", rule="trapezoid-log", tail_mass=[tails[0] / total, tails[1] / total])
    return replace(density, normalization=total, meta=meta)


def tail_diagnostic(density: TabulatedDensity, margin=TAIL_MARGIN):
    """Upper-decade log-log slope and a propriety verdict."""
    t = density.theta
    if np.isfinite(density.support[1]) and density.support[1] <= t[-1] * (1 + 1e-12):
        return {"slope": None, "verdict": "proper"}
    if t[-1] / t[0] < 100:
        return {"slope": None, "verdict": "inconclusive"}
    slope = density.tail_slopes()[1]
    if not np.isfinite(slope):
        return {"slope": None, "verdict": "inconclusive"}
    return {"slope": slope, "verdict": "proper" if slope < -1 - margin else "improper"}


def tabulate(prior, theta_grid, kind=None, extrapolate_failures=True) -> TabulatedDensity:
    """Evaluate a prior on a grid and normalize it.

    Exact priors can fail the conditioning guard at large ranges; the
    tabulation is then cut at the last good point and the fitted tail slope
    carries the mass beyond it. The cut is recorded in ``meta``.
    """
    theta_grid = np.asarray(theta_grid, dtype=float)
    vals = []
    cut = None
    for t in theta_grid:
        try:
            vals.append(prior(t))
        except ConditioningError as err:
            if not extrapolate_failures or len(vals) < 10:
                raise
            cut = {"theta": float(t), "reason": str(err)}
            break
    keep = theta_grid[: len(vals)]
    meta = {"n_grid": int(theta_grid.size), "theta_range": [float(theta_grid[0]), float(theta_grid[-1])]}
    if cut is not None:
        meta["conditioning_cut"] = cut
    dens = TabulatedDensity(keep, np.array(vals), kind or getattr(prior, "kind", "custom"), meta=meta)
    return normalize(dens)


def tabulate_for_design(prior, design: SpatialDesign, n=200, lo=1e-2, hi=1e3, **kw):
    _, d_min = nearest_neighbor_distances(design)
    return tabulate(prior, default_theta_grid(d_min, n, lo, hi), **kw)
