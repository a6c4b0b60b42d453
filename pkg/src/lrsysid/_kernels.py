"""Compiled block-tridiagonal recurrences (small dense blocks, long chains)."""
import numpy as np
from numba import njit


@njit(cache=True)
def _chol_inplace(A):
    n = A.shape[0]
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= A[j, k] * A[j, k]
        if not s > 0.0:
            return False
        d = np.sqrt(s)
        A[j, j] = d
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= A[i, k] * A[j, k]
            A[i, j] = s / d
        for i in range(j):
            A[i, j] = 0.0
    return True


@njit(cache=True)
def block_factor(diag, sub):
    """Block Cholesky of ``-W``; returns (L, C, failing block or -1)."""
    T, n, _ = diag.shape
    L = np.zeros((T, n, n))
    C = np.zeros((T, n, n))
    for t in range(T):
        P = -diag[t].copy()
        if t > 0:
            Lp = L[t - 1]
            # C_t L_{t-1}' = -sub[t-1], row by row forward substitution
            for i in range(n):
                for j in range(n):
                    s = -sub[t - 1, i, j]
                    for k in range(j):
                        s -= C[t, i, k] * Lp[j, k]
                    C[t, i, j] = s / Lp[j, j]
            for i in range(n):
                for j in range(n):
                    s = 0.0
                    for k in range(n):
                        s += C[t, i, k] * C[t, j, k]
                    P[i, j] -= s
        if not _chol_inplace(P):
            return L, C, t
        L[t] = P
    return L, C, -1


@njit(cache=True)
def forward(L, C, B):
    """Z with L Z = B for the block bidiagonal factor; B is (T, n, k)."""
    T, n, m = B.shape
    Z = np.empty_like(B)
    r = np.empty((n, m))
    for t in range(T):
        for i in range(n):
            for c in range(m):
                r[i, c] = B[t, i, c]
        if t > 0:
            for i in range(n):
                for k in range(n):
                    a = C[t, i, k]
                    if a != 0.0:
                        for c in range(m):
                            r[i, c] -= a * Z[t - 1, k, c]
        for i in range(n):
            for k in range(i):
                a = L[t, i, k]
                for c in range(m):
                    r[i, c] -= a * Z[t, k, c]
            d = L[t, i, i]
            for c in range(m):
                Z[t, i, c] = r[i, c] / d
    return Z


@njit(cache=True)
def backward(L, C, Z):
    """X with L' X = Z."""
    T, n, m = Z.shape
    X = np.empty_like(Z)
    r = np.empty((n, m))
    for t in range(T - 1, -1, -1):
        for i in range(n):
            for c in range(m):
                r[i, c] = Z[t, i, c]
        if t < T - 1:
            for i in range(n):
                for k in range(n):
                    a = C[t + 1, k, i]
                    if a != 0.0:
                        for c in range(m):
                            r[i, c] -= a * X[t + 1, k, c]
        for i in range(n - 1, -1, -1):
            for k in range(i + 1, n):
                a = L[t, k, i]
                for c in range(m):
                    r[i, c] -= a * X[t, k, c]
            d = L[t, i, i]
            for c in range(m):
                X[t, i, c] = r[i, c] / d
    return X
