"""Dense kernels: symmetric-definite factorization, log-det, eigen extremes, nullspaces.

Thin contracts over LAPACK (through numpy/scipy). Everything here is
deterministic for fixed inputs and thread count.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NoConvergence, NotDefinite


@dataclass(frozen=True)
class SymFactor:
    """Cholesky factor ``M = L L'`` plus pivot bookkeeping.

    ``pivots`` are the squared diagonal entries of ``L`` (the pivots of the
    equivalent LDL' elimination).
    """

    L: np.ndarray
    pivots: np.ndarray
    success: bool

    @property
    def min_pivot(self) -> float:
        return float(self.pivots.min()) if self.pivots.size else np.inf


def sym_factor(M: np.ndarray, floor: float = 0.0) -> SymFactor:
    """Factor a symmetric positive definite matrix.

    Raises NotDefinite when LAPACK finds a nonpositive pivot or when any pivot
    falls below ``floor``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] == 0:
        return SymFactor(np.zeros((0, 0)), np.zeros(0), True)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotDefinite(f"matrix is not positive definite: {exc}") from None
    pivots = np.diag(L) ** 2
    if not np.all(np.isfinite(pivots)):
        raise NotDefinite("non-finite pivot in factorization")
    if pivots.min() < floor:
        k = int(np.argmin(pivots))
        raise NotDefinite(f"pivot {pivots[k]:.3e} below floor {floor:.1e}", index=k)
    return SymFactor(L, pivots, True)


def sym_solve(fac: SymFactor, rhs: np.ndarray) -> np.ndarray:
    return scipy.linalg.cho_solve((fac.L, True), rhs, check_finite=False)


def logdet(fac: SymFactor) -> float:
    return float(np.sum(np.log(fac.pivots)))


def eig_extremes(M: np.ndarray) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] == 0:
        return np.inf, -np.inf
    try:
        w = np.linalg.eigvalsh(M)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(f"eigenvalue iteration failed: {exc}") from None
    return float(w[0]), float(w[-1])


def nullspace_basis(A: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis for ker(A) via SVD.

    Singular values below ``rtol * sigma_max`` count as zero.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, n = A.shape
    if m == 0 or not np.any(A):
        return np.eye(n)
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > rtol * s[0]))
    return vt[rank:].T.copy()


def numerical_rank(A: np.ndarray, rtol: float = 1e-10) -> int:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0 or not np.any(A):
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > rtol * s[0]))


def fixed_sum(x: np.ndarray) -> float:
    """Sequential left-to-right sum, independent of BLAS blocking."""
    total = 0.0
    for v in np.ravel(x):
        total += float(v)
    return total
