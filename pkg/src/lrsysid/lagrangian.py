"""Lagrangian-relaxation bound on linearized simulation error.

With multipliers ``lambda_t = 2 Delta_t`` the relaxed objective is::

    J(theta, Delta) = |G Delta + eta|^2 - 2 Delta' (F Delta - eps)
                    = Delta' W Delta - 2 w' Delta + |eta|^2

where ``W = G'G - F - F'`` is block tridiagonal and ``w = -G'eta - eps``. Its
supremum over ``Delta`` is attained at ``W Delta* = w`` whenever ``W < 0``.
Everything below works on the per-time-step blocks so that a value, gradient
and Hessian evaluation costs O(T).

Time is 0-based here: ``eps[s]`` couples samples ``s`` and ``s + 1`` and
enters the lifted vector at block ``s + 1`` (block 0 carries a zero).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import NotDefinite
from .models import FUNCS, Dataset, ModelStructure

_CACHE: dict = {}
_CACHE_LIMIT = 16


@dataclass(frozen=True)
class LiftedFeatures:
    """Monomial values and x-gradients at the data; independent of theta."""

    Phi: dict  # fn -> (T, n_mono)
    D: dict  # fn -> (T, n_mono, n_x)
    y: np.ndarray
    params: dict  # fn -> (p, c, k) int arrays for the free coefficients

    @property
    def T(self) -> int:
        return self.y.shape[0]


def lifted_features(ms: ModelStructure, data: Dataset) -> LiftedFeatures:
    """Feature tensors for (structure, dataset), cached by content hash."""
    key = (ms.fingerprint(), data.fingerprint())
    hit = _CACHE.get(key)
    if hit is not None:
        return hit
    X = data.require_states()
    if X.shape[1] != ms.n_x:
        raise ValueError(f"states have {X.shape[1]} columns, model has n_x={ms.n_x}")
    Phi, D, params = {}, {}, {}
    for fn in FUNCS:
        Phi[fn], D[fn] = ms.features(fn, X, data.u)
        idx = ms.index[fn]
        c, k = np.nonzero(idx >= 0)
        params[fn] = (idx[c, k], c, k)
    feats = LiftedFeatures(Phi, D, data.y.copy(), params)
    if len(_CACHE) >= _CACHE_LIMIT:
        _CACHE.pop(next(iter(_CACHE)))
    _CACHE[key] = feats
    return feats


@dataclass(frozen=True)
class LiftedData:
    """Per-step blocks of the lifted problem at a fixed rho."""

    ms: ModelStructure
    feats: LiftedFeatures
    E: np.ndarray  # (T, nx, nx)
    F: np.ndarray  # (T, nx, nx)
    G: np.ndarray  # (T, ny, nx)
    eps: np.ndarray  # (T-1, nx)
    eta: np.ndarray  # (T, ny)

    @property
    def T(self) -> int:
        return self.E.shape[0]

    @property
    def eps_lifted(self) -> np.ndarray:
        return np.vstack([np.zeros((1, self.ms.n_x)), self.eps])

    def derivative_blocks(self, p: int):
        """Constant blocks dE, dF, dG, deps, deta for parameter ``p`` of rho."""
        fn, c, k = self.ms.param_layout[p]
        T, nx, ny = self.T, self.ms.n_x, self.ms.n_y
        dE = np.zeros((T, nx, nx))
        dF = np.zeros((T, nx, nx))
        dG = np.zeros((T, ny, nx))
        deps = np.zeros((T - 1, nx))
        deta = np.zeros((T, ny))
        Phi, D = self.feats.Phi[fn], self.feats.D[fn]
        if fn == "e":
            dE[:, c, :] = D[:, k, :]
            deps[:, c] = -Phi[1:, k]
        elif fn == "f":
            dF[:, c, :] = D[:, k, :]
            deps[:, c] = Phi[:-1, k]
        else:
            dG[:, c, :] = D[:, k, :]
            deta[:, c] = Phi[:, k]
        return dE, dF, dG, deps, deta


def assemble_lifted(ms: ModelStructure, theta, data: Dataset) -> LiftedData:
    feats = lifted_features(ms, data)
    return lift(ms, feats, np.asarray(theta, float)[: ms.n_rho])


def lift(ms: ModelStructure, feats: LiftedFeatures, rho) -> LiftedData:
    R = ms.coefficients(rho)
    E = np.einsum("ck,tkj->tcj", R["e"], feats.D["e"])
    F = np.einsum("ck,tkj->tcj", R["f"], feats.D["f"])
    G = np.einsum("ck,tkj->tcj", R["g"], feats.D["g"])
    eps = feats.Phi["f"][:-1] @ R["f"].T - feats.Phi["e"][1:] @ R["e"].T
    eta = feats.Phi["g"] @ R["g"].T - feats.y
    return LiftedData(ms, feats, E, F, G, eps, eta)


# ---------------------------------------------------------------------- W, w


@dataclass(frozen=True)
class BlockTridiagonal:
    """Symmetric block tridiagonal matrix; ``sub[t]`` sits at block (t+1, t)."""

    diag: np.ndarray  # (T, n, n)
    sub: np.ndarray  # (T-1, n, n)

    @property
    def T(self) -> int:
        return self.diag.shape[0]

    @property
    def n(self) -> int:
        return self.diag.shape[1]

    def matvec(self, X: np.ndarray) -> np.ndarray:
        """Product with X of shape (T, n) or (T, n, k)."""
        squeeze = X.ndim == 2
        if squeeze:
            X = X[..., None]
        out = np.einsum("tij,tjk->tik", self.diag, X)
        out[1:] += np.einsum("tij,tjk->tik", self.sub, X[:-1])
        out[:-1] += np.einsum("tji,tjk->tik", self.sub, X[1:])
        return out[..., 0] if squeeze else out

    def dense(self) -> np.ndarray:
        T, n = self.T, self.n
        M = np.zeros((T * n, T * n))
        for t in range(T):
            M[t * n:(t + 1) * n, t * n:(t + 1) * n] = self.diag[t]
        for t in range(T - 1):
            M[(t + 1) * n:(t + 2) * n, t * n:(t + 1) * n] = self.sub[t]
            M[t * n:(t + 1) * n, (t + 1) * n:(t + 2) * n] = self.sub[t].T
        return M


def build_W_w(ld: LiftedData):
    GtG = np.einsum("tci,tcj->tij", ld.G, ld.G)
    diag = GtG - ld.E - ld.E.transpose(0, 2, 1)
    sub = ld.F[:-1].copy()
    w = -np.einsum("tci,tc->ti", ld.G, ld.eta)
    w[1:] -= ld.eps
    return BlockTridiagonal(diag, sub), w


@dataclass(frozen=True)
class BlockFactor:
    """Block Cholesky factor of ``-W``: diagonal factors ``L[t]`` and couplings
    ``C[t] = (-W)[t, t-1] L[t-1]^{-T}`` (``C[0]`` unused)."""

    L: np.ndarray  # (T, n, n) lower triangular
    C: np.ndarray  # (T, n, n)


def block_thomas_factor(W: BlockTridiagonal) -> BlockFactor:
    """Forward block elimination of ``-W``; raises NotDefinite at the failing block."""
    diag = np.ascontiguousarray(W.diag, dtype=float)
    sub = np.ascontiguousarray(W.sub, dtype=float).reshape(max(W.T - 1, 0), W.n, W.n)
    L, C, bad = _kernels.block_factor(diag, sub)
    if bad >= 0:
        raise NotDefinite(f"block pivot {bad} of -W is not positive definite", index=int(bad))
    return BlockFactor(L, C)


def forward_substitute(fac: BlockFactor, B: np.ndarray) -> np.ndarray:
    """Z with ``L Z = B`` for the block factor L of ``-W``; B is (T, n, k)."""
    return _kernels.forward(fac.L, fac.C, np.ascontiguousarray(B, dtype=float))


def backward_substitute(fac: BlockFactor, Z: np.ndarray) -> np.ndarray:
    return _kernels.backward(fac.L, fac.C, np.ascontiguousarray(Z, dtype=float))


def solve_W(fac: BlockFactor, rhs: np.ndarray) -> np.ndarray:
    """Solve ``W X = rhs`` for rhs of shape (T, n) or (T, n, k)."""
    squeeze = rhs.ndim == 2
    B = -(rhs[..., None] if squeeze else rhs)
    X = backward_substitute(fac, forward_substitute(fac, B))
    return X[..., 0] if squeeze else X


# ---------------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class ObjectiveEval:
    value: float
    delta: np.ndarray  # (T, nx)
    gradient: np.ndarray  # (n_theta,), zero outside rho
    hess_rho: Optional[np.ndarray]  # (n_rho, n_rho)
    kkt_residual: float
    w_norm: float

    @property
    def hessian(self) -> Optional[np.ndarray]:
        if self.hess_rho is None:
            return None
        n, m = self.gradient.size, self.hess_rho.shape[0]
        H = np.zeros((n, n))
        H[:m, :m] = self.hess_rho
        return H


def _gradient_and_columns(ld: LiftedData, delta: np.ndarray, want_hessian: bool):
    """Envelope gradient over rho plus (optionally) the Hessian factors A and C.

    ``A[:, p]`` is ``G_p Delta + eta_p`` (shape (T, ny, n_rho)); ``C[:, :, p]``
    is ``w_p - W_p Delta`` (shape (T, nx, n_rho)).
    """
    ms, fe = ld.ms, ld.feats
    T, nx, ny, nr = ld.T, ms.n_x, ms.n_y, ms.n_rho
    r = np.einsum("tcj,tj->tc", ld.G, delta) + ld.eta
    grad = np.zeros(nr)
    A = np.zeros((T, ny, nr)) if want_hessian else None
    C = np.zeros((T, nx, nr)) if want_hessian else None
    eye = np.eye(nx)

    # g: output map coefficients
    p, c, k = fe.params["g"]
    if p.size:
        a_g = np.einsum("tkj,tj->tk", fe.D["g"], delta) + fe.Phi["g"]
        grad[p] = 2.0 * np.einsum("tc,tk->ck", r, a_g)[c, k]
        if want_hessian:
            A[:, c, p] = a_g[:, k]
            C[:, :, p] = (-ld.G[:, c, :] * a_g[:, k][:, :, None]
                          - fe.D["g"][:, k, :] * r[:, c][:, :, None]).transpose(0, 2, 1)

    # e: left-hand map
    p, c, k = fe.params["e"]
    if p.size:
        b_e = np.einsum("tkj,tj->tk", fe.D["e"], delta)
        b_e[1:] += fe.Phi["e"][1:]
        grad[p] = -2.0 * np.einsum("tc,tk->ck", delta, b_e)[c, k]
        if want_hessian:
            C[:, :, p] = (eye[c][None, :, :] * b_e[:, k][:, :, None]
                          + fe.D["e"][:, k, :] * delta[:, c][:, :, None]).transpose(0, 2, 1)

    # f: right-hand map
    p, c, k = fe.params["f"]
    if p.size:
        b_f = np.einsum("tkj,tj->tk", fe.D["f"][:-1], delta[:-1]) + fe.Phi["f"][:-1]
        grad[p] = 2.0 * np.einsum("tc,tk->ck", delta[1:], b_f)[c, k]
        if want_hessian:
            blk = np.zeros((T, p.size, nx))
            blk[1:] -= eye[c][None, :, :] * b_f[:, k][:, :, None]
            blk[:-1] -= fe.D["f"][:-1, k, :] * delta[1:, c][:, :, None]
            C[:, :, p] = blk.transpose(0, 2, 1)
    return r, grad, A, C


def evaluate(ms: ModelStructure, theta, ld: LiftedData, order: int = 2) -> ObjectiveEval:
    """Value, gradient (order >= 1) and Hessian (order >= 2) of the relaxed bound."""
    theta = np.asarray(theta, float)
    W, w = build_W_w(ld)
    fac = block_thomas_factor(W)
    delta = solve_W(fac, w)
    kkt = float(np.max(np.abs(W.matvec(delta) - w)))
    r = np.einsum("tcj,tj->tc", ld.G, delta) + ld.eta
    Fd = -np.einsum("tij,tj->ti", ld.E, delta)
    Fd[1:] += np.einsum("tij,tj->ti", ld.F[:-1], delta[:-1])
    # value = |G D + eta|^2 - 2 D'(F D - eps), with (F D)_t = E_t D_t - F_{t-1} D_{t-1}
    value = float(np.sum(r * r) + 2.0 * np.sum(delta * Fd) + 2.0 * np.sum(delta[1:] * ld.eps))
    grad = np.zeros(theta.size)
    H = None
    if order >= 1:
        _, g_rho, A, C = _gradient_and_columns(ld, delta, order >= 2)
        grad[: ms.n_rho] = g_rho
        if order >= 2:
            Y = forward_substitute(fac, C)
            Af = A.reshape(-1, ms.n_rho)
            Yf = Y.reshape(-1, ms.n_rho)
            H = 2.0 * (Af.T @ Af) + 2.0 * (Yf.T @ Yf)
            H = 0.5 * (H + H.T)
    return ObjectiveEval(value, delta, grad, H, kkt, float(np.max(np.abs(w))))


def delta_sensitivity(ld: LiftedData, delta: np.ndarray) -> np.ndarray:
    """dDelta*/drho as (T, nx, n_rho), from ``W dDelta_p = w_p - W_p Delta``."""
    W, _ = build_W_w(ld)
    fac = block_thomas_factor(W)
    _, _, _, C = _gradient_and_columns(ld, delta, True)
    return solve_W(fac, C)


class LagrangianOracle:
    """Objective oracle for the barrier solver: the relaxed bound over theta."""

    convex = True

    def __init__(self, ms: ModelStructure, data: Dataset, n_theta: int):
        self.ms = ms
        self.feats = lifted_features(ms, data)
        self.n_theta = n_theta
        self.hess_block = slice(0, ms.n_rho)
        self.last: Optional[ObjectiveEval] = None

    def lifted(self, theta) -> LiftedData:
        return lift(self.ms, self.feats, np.asarray(theta)[: self.ms.n_rho])

    def evaluate(self, theta, order=2) -> ObjectiveEval:
        ev = evaluate(self.ms, theta, self.lifted(theta), order)
        self.last = ev
        return ev

    def __call__(self, theta, order=2):
        ev = self.evaluate(theta, order)
        return ev.value, ev.gradient, ev.hess_rho


# ---------------------------------------------------------------------- dense oracle


def _lifted_dense(ld: LiftedData, dE, dF, dG):
    """Dense lifted G and F (F has E_t on the diagonal and -F_t below it)."""
    T, nx, ny = dE.shape[0], dE.shape[1], dG.shape[1]
    Gd = np.zeros((T * ny, T * nx))
    Fd = np.zeros((T * nx, T * nx))
    for t in range(T):
        Gd[t * ny:(t + 1) * ny, t * nx:(t + 1) * nx] = dG[t]
        Fd[t * nx:(t + 1) * nx, t * nx:(t + 1) * nx] = dE[t]
        if t > 0:
            Fd[t * nx:(t + 1) * nx, (t - 1) * nx:t * nx] = -dF[t - 1]
    return Gd, Fd


def dense_reference_eval(ms: ModelStructure, theta, ld: LiftedData) -> ObjectiveEval:
    """Same contract as :func:`evaluate` using dense lifted matrices (tests only)."""
    T = ld.T
    if T > 200:
        raise ValueError("dense reference is limited to T <= 200")
    theta = np.asarray(theta, float)
    Gd, Fd = _lifted_dense(ld, ld.E, ld.F, ld.G)
    eta = ld.eta.ravel()
    eps = ld.eps_lifted.ravel()
    W = Gd.T @ Gd - Fd - Fd.T
    w = -Gd.T @ eta - eps
    try:
        cf = scipy.linalg.cho_factor(-W, lower=True)
    except np.linalg.LinAlgError:
        raise NotDefinite("-W is not positive definite") from None
    delta = -scipy.linalg.cho_solve(cf, w)
    value = float(np.sum((Gd @ delta + eta) ** 2) - 2.0 * delta @ (Fd @ delta - eps))
    nr = ms.n_rho
    grad = np.zeros(theta.size)
    A = np.zeros((Gd.shape[0], nr))
    Cm = np.zeros((W.shape[0], nr))
    for p in range(nr):
        dE, dF, dG, deps, deta = ld.derivative_blocks(p)
        Gp, Fp = _lifted_dense(ld, dE, dF, dG)
        eta_p = deta.ravel()
        eps_p = np.concatenate([np.zeros(ms.n_x), deps.ravel()])
        a_p = Gp @ delta + eta_p
        grad[p] = 2.0 * (Gd @ delta + eta) @ a_p - 2.0 * delta @ (Fp @ delta - eps_p)
        W_p = Gp.T @ Gd + Gd.T @ Gp - Fp - Fp.T
        w_p = -Gp.T @ eta - Gd.T @ eta_p - eps_p
        A[:, p] = a_p
        Cm[:, p] = w_p - W_p @ delta
    # d2J/dtheta2 = L_tt + L_tD dD/dtheta with dD/dtheta = W^{-1} (w_p - W_p D)
    dD = -scipy.linalg.cho_solve(cf, Cm)
    H = 2.0 * A.T @ A - 2.0 * Cm.T @ dD
    H = 0.5 * (H + H.T)
    kkt = float(np.max(np.abs(W @ delta - w)))
    return ObjectiveEval(value, delta.reshape(T, ms.n_x), grad, H, kkt, float(np.max(np.abs(w))))
