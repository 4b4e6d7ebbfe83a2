"""Trigonometric basis on the auxiliary grid and the diagonal spectral covariance.

On a regular M1 x M2 grid the field is approximated by a finite sum of
cosines and sines at the Fourier frequencies of the grid, with independent
Gaussian coefficients whose variances follow the aliased spectral density.
In the rotated coordinates V1 = L1^T z the covariance is then diagonal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .covmodel import AliasConfig, AliasedSpectrum, MaternParams, SpectralFamily
from .designs import AuxGrid, SpectralDesign

__all__ = [
    "SpectralBasis",
    "DiagonalSpectrum",
    "build_H1",
    "build_X1",
    "lambda_tilde",
    "layout_spectrum",
    "spectral_cov",
    "spectral_corr_by_lag",
    "DENSE_WARN_M",
]

DENSE_WARN_M = 4096
X1_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class SpectralBasis:
    """H1 with its analytic column normalization.

    ``scale`` holds the diagonal of (H1^T H1)^(-1/2), so L1 = H1 * scale.
    """

    H1: np.ndarray
    grid: AuxGrid
    spectral: SpectralDesign
    scale: np.ndarray
    X1: np.ndarray | None = None

    @property
    def M(self):
        return self.grid.M

    @property
    def L1(self):
        return self.H1 * self.scale

    def contrasts(self, z_grid):
        """V1 = L1^T z for a field observed on the grid (i outer, j inner)."""
        z_grid = np.asarray(z_grid, dtype=float)
        if z_grid.shape[0] != self.M:
            raise ValueError(f"expected {self.M} grid values, got {z_grid.shape[0]}")
        v = self.H1.T @ z_grid
        return v * (self.scale[:, None] if v.ndim > 1 else self.scale)


def _check_pair(grid: AuxGrid, spectral: SpectralDesign):
    if (grid.m1, grid.m2) != (spectral.m1, spectral.m2):
        raise ValueError(
            f"grid is {grid.m1}x{grid.m2} but spectral design is {spectral.m1}x{spectral.m2}"
        )
    if not np.isclose(grid.delta, spectral.delta, rtol=1e-12, atol=0):
        raise ValueError(f"grid spacing {grid.delta} differs from spectral spacing {spectral.delta}")


def _phases(grid: AuxGrid, idx: np.ndarray):
    """Angles omega^T u in exact integer arithmetic, shape (M, len(idx)).

    omega_{m1,m2}^T u_{i,j} = 2 pi (m1 i M2 + m2 j M1) / M, reduced mod M
    before the float conversion so that the orthogonality identities hold to
    machine precision.
    """
    M = grid.M
    ij = grid.ij.astype(np.int64)
    k = (np.outer(ij[:, 0], idx[:, 0] * grid.m2) + np.outer(ij[:, 1], idx[:, 1] * grid.m1)) % M
    return (2 * np.pi / M) * k


def build_H1(grid: AuxGrid, spectral: SpectralDesign) -> SpectralBasis:
    """Columns: cos for I_C, 2 cos for I, -2 sin for I."""
    _check_pair(grid, spectral)
    M = grid.M
    if M > DENSE_WARN_M:
        warnings.warn(
            f"dense H1 with M={M} needs {8 * M * M / 1e9:.2f} GB",
            ResourceWarning,
            stacklevel=2,
        )
    half = spectral.half
    ang_c = _phases(grid, spectral.corner)
    ang_i = _phases(grid, half)
    H1 = np.empty((M, M), order="F")
    H1[:, :4] = np.cos(ang_c)
    H1[:, 4 : 4 + len(half)] = 2 * np.cos(ang_i)
    H1[:, 4 + len(half) :] = -2 * np.sin(ang_i)
    H1[:, 0] = 1.0
    norms = np.concatenate([np.full(4, M), np.full(M - 4, 2 * M)]).astype(float)
    return SpectralBasis(H1, grid, spectral, 1.0 / np.sqrt(norms))


def build_X1(basis: SpectralBasis, covariates=None) -> SpectralBasis:
    """Attach X1 = L1^T X~, with X~ the covariates evaluated on the grid.

    ``covariates`` is either an (M, p) array or a callable of the physical
    grid points; the default is the constant mean.
    """
    pts = basis.grid.points
    if covariates is None:
        Xt = np.ones((basis.M, 1))
    elif callable(covariates):
        Xt = np.asarray(covariates(pts), dtype=float)
    else:
        Xt = np.asarray(covariates, dtype=float)
    if Xt.ndim == 1:
        Xt = Xt[:, None]
    if Xt.shape[0] != basis.M:
        raise ValueError(f"covariates need {basis.M} rows, got {Xt.shape[0]}")
    X1 = basis.scale[:, None] * (basis.H1.T @ Xt)
    # Entries at rounding level are exact zeros of the orthogonality
    # identities; left in, they get amplified by Lambda^{-1/2} at large ranges.
    X1[np.abs(X1) <= X1_ZERO_TOL * np.max(np.abs(X1), axis=0)] = 0.0
    if np.linalg.matrix_rank(X1) < Xt.shape[1]:
        raise ValueError("covariates on the grid are rank deficient")
    return SpectralBasis(basis.H1, basis.grid, basis.spectral, basis.scale, X1)


@dataclass(frozen=True)
class DiagonalSpectrum:
    """Diagonal of Lambda~ in the (I_C, I, I) layout."""

    values: np.ndarray
    layout: np.ndarray  # (M, 2) index pair behind each entry
    c_delta: float

    @property
    def M(self):
        return self.values.shape[0]


def layout_spectrum(spectral: SpectralDesign, family: SpectralFamily, alias: AliasConfig) -> AliasedSpectrum:
    """Aliased spectrum evaluated on the layout frequencies (I_C, I, I)."""
    if not np.isclose(alias.delta, spectral.delta, rtol=1e-12, atol=0):
        raise ValueError("alias spacing must equal the spectral design spacing")
    return AliasedSpectrum(spectral.layout_frequencies, family, alias)


def lambda_tilde(spectral: SpectralDesign, params: MaternParams, alias: AliasConfig) -> DiagonalSpectrum:
    c = (2 * np.pi / alias.delta) ** 2
    f = layout_spectrum(spectral, params.family, alias).density(params.theta)
    return DiagonalSpectrum(c * f, spectral.layout, c)


def _coef_variances(basis: SpectralBasis, params: MaternParams, alias: AliasConfig):
    """Diagonal of G: c f / M on the corners and c f / (2M) on I."""
    lam = lambda_tilde(basis.spectral, params, alias).values
    var = lam / (2 * basis.M)
    var[:4] *= 2
    return var


def spectral_cov(basis: SpectralBasis, params: MaternParams, alias: AliasConfig):
    """sigma^2 H1 G H1^T, the covariance implied on the grid."""
    g = _coef_variances(basis, params, alias)
    B = basis.H1 * np.sqrt(g)
    return params.sigma2 * (B @ B.T)


def spectral_corr_by_lag(grid: AuxGrid, spectral: SpectralDesign, params: MaternParams, alias: AliasConfig):
    """Implied correlation between u_{1,1} and every other grid point.

    Returns (distances, correlations, variance / sigma^2) without forming H1;
    the covariance of the trigonometric sum only depends on the lag. The
    correlation is normalized by the implied variance, which falls slightly
    short of sigma^2 because of the truncated aliasing sum.
    """
    _check_pair(grid, spectral)
    M = grid.M
    f = layout_spectrum(spectral, params.family, alias).density(params.theta)
    c = (2 * np.pi / alias.delta) ** 2
    n_half = len(spectral.half)
    var_c = c * f[:4] / M
    var_i = c * f[4 : 4 + n_half] / (2 * M)
    lag = grid.ij - 1
    k_c = (np.outer(lag[:, 0], spectral.corner[:, 0] * grid.m2) + np.outer(lag[:, 1], spectral.corner[:, 1] * grid.m1)) % M
    half = spectral.half
    k_i = (np.outer(lag[:, 0], half[:, 0] * grid.m2) + np.outer(lag[:, 1], half[:, 1] * grid.m1)) % M
    # cov(A cos a + B sin a, A cos b + B sin b) = var cos(a - b); the I terms carry a factor 4
    cov = np.cos(2 * np.pi * k_c / M) @ var_c + 4 * (np.cos(2 * np.pi * k_i / M) @ var_i)
    dist = grid.delta * np.sqrt(np.sum(lag.astype(float) ** 2, axis=1))
    return dist, cov / cov[0], float(cov[0])
