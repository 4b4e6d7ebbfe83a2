"""Guarded dense linear algebra shared by the exact-likelihood code paths."""

from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

RCOND_MIN = 1e-14


class ConditioningError(ArithmeticError):
    """A covariance matrix is numerically singular at the given range value."""

    def __init__(self, message, theta=None, rcond=None):
        super().__init__(message)
        self.theta = theta
        self.rcond = rcond


def guarded_cholesky(A, theta=None, rcond_min=RCOND_MIN):
    """Lower Cholesky factor of ``A``, refusing near-singular matrices.

    No jitter is ever added: failure of the factorization, or a reciprocal
    1-norm condition estimate below ``rcond_min``, raises ConditioningError.
    """
    where = f" at theta={theta:.6g}" if theta is not None else ""
    try:
        L = linalg.cholesky(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise ConditioningError(f"covariance matrix not positive definite{where}", theta) from None
    anorm = float(np.max(np.sum(np.abs(A), axis=0)))
    rcond, info = lapack.dpocon(L, anorm, uplo="L")
    if info != 0 or not rcond >= rcond_min:
        raise ConditioningError(
            f"covariance matrix nearly singular{where} (rcond={rcond:.3g} < {rcond_min:g})",
            theta,
            rcond,
        )
    return L


def chol_logdet(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def chol_solve(L, b):
    y = linalg.solve_triangular(L, b, lower=True, check_finite=False)
    return linalg.solve_triangular(L.T, y, lower=False, check_finite=False)


def tri_solve(L, b):
    """L^{-1} b for lower-triangular L."""
    return linalg.solve_triangular(L, b, lower=True, check_finite=False)


def orthonormal_complement(A):
    """Orthonormal basis of the orthogonal complement of the column space of A."""
    n, p = A.shape
    U, _, _ = linalg.svd(A, full_matrices=True, check_finite=False)
    return U[:, p:]
