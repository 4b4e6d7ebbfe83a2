"""Matérn covariance, spectral densities and their aliased versions.

The spectral side is written against a generic family of the form

    f_theta(w) = h1(w) * h2(theta) / (|w|^2 + u(theta))^a

so that the log-derivative with respect to the range parameter can be taken
analytically. The Matérn family is one instance, built by :func:`matern_family`.
"""

from __future__ import annotations

import functools
import math

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

__all__ = [
    "MaternParams",
    "SpectralFamily",
    "AliasConfig",
    "AliasedSpectrum",
    "matern_family",
    "matern_corr",
    "matern_dcorr_dtheta",
    "specden",
    "aliased_specden",
    "dlog_aliased_specden",
]

DEFAULT_TRUNCATION = 5


@dataclass(frozen=True)
class MaternParams:
    sigma2: float
    theta: float
    nu: float

    def __post_init__(self):
        for name in ("sigma2", "theta", "nu"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive and finite, got {value}")

    @property
    def family(self) -> "SpectralFamily":
        return matern_family(self.nu)


@dataclass(frozen=True)
class SpectralFamily:
    """Normalized isotropic spectral densities in the plane.

    Parameters
    ----------
    log_h1 : callable
        ``log_h1(r2)`` where ``r2`` is the squared frequency norm. ``h1`` must be
        nonnegative; returning ``-inf`` is allowed.
    h2, dh2 : callable
        Range-dependent scale factor and its derivative.
    u, du : callable
        Range-dependent shift and its derivative.
    a : float
        Decay exponent.
    """

    log_h1: Callable[[np.ndarray], np.ndarray]
    h2: Callable[[float], float]
    dh2: Callable[[float], float]
    u: Callable[[float], float]
    du: Callable[[float], float]
    a: float
    name: str = "custom"

    def log_density(self, omega, theta):
        r2 = _sqnorm(omega)
        return self.log_h1(r2) + np.log(self.h2(theta)) - self.a * np.log(r2 + self.u(theta))

    def density(self, omega, theta):
        return np.exp(self.log_density(omega, theta))


def matern_family(nu: float) -> SpectralFamily:
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    log_c = special.gammaln(nu + 1) + nu * np.log(4 * nu) - np.log(np.pi) - special.gammaln(nu)
    return SpectralFamily(
        log_h1=lambda r2: np.full(np.shape(r2), log_c),
        h2=lambda t: t ** (-2 * nu),
        dh2=lambda t: -2 * nu * t ** (-2 * nu - 1),
        u=lambda t: 4 * nu / t**2,
        du=lambda t: -8 * nu / t**3,
        a=nu + 1,
        name=f"matern(nu={nu:g})",
    )


@dataclass(frozen=True)
class AliasConfig:
    delta: float
    truncation: int = DEFAULT_TRUNCATION

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if int(self.truncation) != self.truncation or self.truncation < 0:
            raise ValueError(f"truncation must be a nonnegative integer, got {self.truncation}")

    @property
    def offsets(self) -> np.ndarray:
        """Lattice shifts (2*pi/delta) * l with max(|l1|, |l2|) <= T, shape (K, 2)."""
        t = int(self.truncation)
        l1, l2 = np.meshgrid(np.arange(-t, t + 1), np.arange(-t, t + 1), indexing="ij")
        ls = np.column_stack([l1.ravel(), l2.ravel()]).astype(float)
        return (2 * np.pi / self.delta) * ls


def _sqnorm(omega):
    omega = np.asarray(omega, dtype=float)
    return np.sum(omega**2, axis=-1)


# ---------------------------------------------------------------------------
# correlation


def _half_integer_order(nu):
    m = nu - 0.5
    if m >= 0 and abs(m - round(m)) < 1e-12 and m <= 20:
        return int(round(m))
    return None


@functools.lru_cache(maxsize=32)
def _half_integer_poly(m):
    """Coefficients c_k of x^k in x^nu K_nu(x) e^x, normalized to c_0 = 1."""
    # term for power x^(m-i): (m+i)! / (i! (m-i)!) 2^-i
    coef = np.array(
        [math.factorial(2 * m - k) / (math.factorial(m - k) * math.factorial(k)) / 2.0 ** (m - k) for k in range(m + 1)]
    )
    coef = coef / coef[0]
    coef.flags.writeable = False
    return coef


def _scaled_distance(r, theta, nu):
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("distances must be finite")
    if np.any(r < 0):
        raise ValueError("distances must be nonnegative")
    return 2.0 * np.sqrt(nu) * r / theta


def matern_corr(r, params: MaternParams):
    """Matérn correlation K_theta(r) in the Handcock-Wallis parametrization.

    Half-integer smoothness uses the closed form ``exp(-x) * poly(x)``; other
    orders go through the exponentially scaled Bessel function in log space,
    so large arguments underflow cleanly to zero.
    """
    nu, theta = params.nu, params.theta
    x = _scaled_distance(r, theta, nu)
    m = _half_integer_order(nu)
    if m is not None:
        poly = np.polynomial.polynomial.polyval(x, _half_integer_poly(m))
        return np.exp(-x) * poly
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    log_k = (
        (1 - nu) * np.log(2.0)
        - special.gammaln(nu)
        + nu * np.log(xp)
        + np.log(special.kve(nu, xp))
        - xp
    )
    out[pos] = np.exp(log_k)
    return out


def matern_dcorr_dtheta(r, params: MaternParams):
    """Derivative of the Matérn correlation with respect to the range theta.

    Uses d/dx [x^nu K_nu(x)] = -x^nu K_{nu-1}(x), so that
    dK/dtheta = x^(nu+1) K_{nu-1}(x) / (2^(nu-1) Gamma(nu) theta).
    """
    nu, theta = params.nu, params.theta
    x = _scaled_distance(r, theta, nu)
    m = _half_integer_order(nu)
    if m is not None:
        c = _half_integer_poly(m)
        p = np.polynomial.polynomial.polyval(x, c)
        dp = np.polynomial.polynomial.polyval(x, np.polynomial.polynomial.polyder(c)) if m > 0 else 0.0
        # dK/dx = e^-x (p' - p); dx/dtheta = -x / theta
        return np.exp(-x) * (p - dp) * x / theta
    out = np.zeros_like(x)
    pos = x > 0
    xp = x[pos]
    log_d = (
        (1 - nu) * np.log(2.0)
        - special.gammaln(nu)
        + (nu + 1) * np.log(xp)
        + np.log(special.kve(nu - 1, xp))
        - xp
        - np.log(theta)
    )
    out[pos] = np.exp(log_d)
    return out


# ---------------------------------------------------------------------------
# spectral densities


def specden(omega, params: MaternParams):
    """Matérn spectral density f_theta(omega) on R^2 (angular frequency)."""
    return params.family.density(omega, params.theta)


class AliasedSpectrum:
    """Truncated aliased spectral density at a fixed set of frequencies.

    The squared norms of all shifted frequencies are computed once so that
    repeated evaluation over theta only costs O(n_freq * (2T+1)^2).
    """

    def __init__(self, omega, family: SpectralFamily, alias: AliasConfig):
        omega = np.atleast_2d(np.asarray(omega, dtype=float))
        if omega.shape[-1] != 2:
            raise ValueError("frequencies must have shape (..., 2)")
        bound = np.pi / alias.delta
        if np.any(np.abs(omega) > bound * (1 + 1e-9)):
            raise ValueError(f"frequencies must lie in the Nyquist square [-{bound:g}, {bound:g}]^2")
        self.omega = omega
        self.family = family
        self.alias = alias
        shifted = omega[:, None, :] + alias.offsets[None, :, :]
        self._r2 = np.sum(shifted**2, axis=-1)  # (n_freq, K)
        self._log_h1 = family.log_h1(self._r2)

    def _log_terms(self, theta):
        return self._log_h1 - self.family.a * np.log(self._r2 + self.family.u(theta))

    def log_density(self, theta):
        lt = self._log_terms(theta)
        return special.logsumexp(lt, axis=1) + np.log(self.family.h2(theta))

    def density(self, theta):
        return np.exp(self.log_density(theta))

    def dlog(self, theta):
        fam = self.family
        lt = self._log_terms(theta)
        lt = lt - lt.max(axis=1, keepdims=True)
        w = np.exp(lt)
        ratio = np.sum(w / (self._r2 + fam.u(theta)), axis=1) / np.sum(w, axis=1)
        return fam.dh2(theta) / fam.h2(theta) - fam.a * fam.du(theta) * ratio


def _aliased(omega, theta, family, alias):
    omega = np.asarray(omega, dtype=float)
    shape = omega.shape[:-1]
    return AliasedSpectrum(omega.reshape(-1, 2), family, alias), shape


def aliased_specden(omega, theta, family: SpectralFamily, alias: AliasConfig):
    """Aliased spectral density truncated to max(|l1|, |l2|) <= T."""
    spec, shape = _aliased(omega, theta, family, alias)
    return spec.density(theta).reshape(shape)


def dlog_aliased_specden(omega, theta, family: SpectralFamily, alias: AliasConfig):
    """Analytic d/dtheta of log aliased_specden; no Bessel functions involved."""
    spec, shape = _aliased(omega, theta, family, alias)
    return spec.dlog(theta).reshape(shape)
