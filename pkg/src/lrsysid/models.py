"""Implicit polynomial state-space models ``e(x[t+1]) = f(x[t], u[t])``, ``y[t] = g(x[t], u[t])``.

Each of ``e``, ``f``, ``g`` is a vector of polynomials sharing one monomial basis
(per function). Every coefficient is either a free parameter (an index into the
parameter vector ``rho``) or a fixed constant. Variables are numbered
``x_1..x_nx`` then ``u_1..u_nu``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionError, MissingStates, NoConvergence, SingularJacobian
from .polyalg import Monomial, monomials_up_to

FUNCS = ("e", "f", "g")

ROOT_TOL = 1e-9
MAX_ROOT_ITERS = 100


@dataclass(frozen=True)
class ModelStructure:
    """Declared model family plus the frozen monomial -> parameter layout.

    Build with :meth:`polynomial`, :meth:`linear` or :meth:`custom` rather than
    the raw constructor.
    """

    n_x: int
    n_u: int
    n_y: int
    bases: dict  # func -> tuple[Monomial, ...] over (x, u)
    index: dict  # func -> int array (n_coord, n_mono); -1 marks a fixed coefficient
    fixed: dict  # func -> float array (n_coord, n_mono); used where index == -1
    kind: str = "custom"
    degrees: dict = field(default_factory=dict)
    separable_f: bool = True

    # ---------------------------------------------------------------- builders
    @classmethod
    def custom(cls, n_x, n_u, n_y, bases, free=None, fixed=None, kind="custom",
               degrees=None, separable_f=True, order="func"):
        """Generic builder.

        ``free[func]`` is a boolean (n_coord, n_mono) mask of free coefficients
        (default: all free); ``fixed[func]`` gives values of the others.
        ``order='func'`` numbers parameters function-major, coordinate, monomial;
        ``order='vec'`` numbers each function's coefficient matrix column-major.
        """
        n_coord = {"e": n_x, "f": n_x, "g": n_y}
        index, fixed_arr = {}, {}
        nxt = 0
        for fn in FUNCS:
            basis = tuple(bases[fn])
            shape = (n_coord[fn], len(basis))
            mask = np.ones(shape, bool) if free is None or fn not in free else np.asarray(free[fn], bool)
            vals = np.zeros(shape) if fixed is None or fn not in fixed else np.asarray(fixed[fn], float)
            if mask.shape != shape or vals.shape != shape:
                raise DimensionError(f"free/fixed for {fn} must have shape {shape}")
            idx = -np.ones(shape, dtype=np.int64)
            cells = [(i, k) for i in range(shape[0]) for k in range(shape[1])]
            if order == "vec":
                cells = [(i, k) for k in range(shape[1]) for i in range(shape[0])]
            for i, k in cells:
                if mask[i, k]:
                    idx[i, k] = nxt
                    nxt += 1
            index[fn] = idx
            fixed_arr[fn] = np.where(mask, 0.0, vals)
        return cls(n_x, n_u, n_y, {fn: tuple(bases[fn]) for fn in FUNCS}, index, fixed_arr,
                   kind=kind, degrees=dict(degrees or {}), separable_f=separable_f)

    @classmethod
    def polynomial(cls, n_x, n_u, n_y, deg_e=3, deg_fx=3, deg_fu=1, deg_g=1, deg_gu=1,
                   separable_f=True):
        """Full-monomial family: ``e`` without constant, ``f`` and ``g`` with one."""
        xs = monomials_up_to(n_x, deg_e)[1:]
        us = monomials_up_to(n_u, max(deg_fu, deg_gu), offset=n_x) if n_u else []
        if separable_f:
            f_basis = monomials_up_to(n_x, deg_fx) + [m for m in us if 1 <= m.degree <= deg_fu]
        else:
            xvars, uvars = range(n_x), range(n_x, n_x + n_u)
            f_basis = [
                m for m in monomials_up_to(n_x + n_u, max(deg_fx, deg_fu))
                if m.degree_in(xvars) <= deg_fx and m.degree_in(uvars) <= deg_fu
            ]
        g_basis = monomials_up_to(n_x, deg_g) + [m for m in us if 1 <= m.degree <= deg_gu]
        degrees = dict(e=deg_e, fx=deg_fx, fu=deg_fu, g=deg_g, gu=deg_gu)
        return cls.custom(n_x, n_u, n_y, dict(e=xs, f=f_basis, g=g_basis), kind="poly",
                          degrees=degrees, separable_f=separable_f)

    @classmethod
    def linear(cls, n_x, n_u, n_y):
        """``E x+ = F x + K u``, ``y = C x + D u``; rho = [vec E; vec F; vec K; vec C; vec D]."""
        xs = [Monomial({j: 1}) for j in range(n_x)]
        us = [Monomial({n_x + j: 1}) for j in range(n_u)]
        ms = cls.custom(n_x, n_u, n_y, dict(e=xs, f=xs + us, g=xs + us), kind="linear",
                        degrees=dict(e=1, fx=1, fu=1, g=1, gu=1), order="vec")
        return ms

    # ---------------------------------------------------------------- layout
    @property
    def n_vars(self) -> int:
        return self.n_x + self.n_u

    @cached_property
    def n_rho(self) -> int:
        return int(sum((self.index[fn] >= 0).sum() for fn in FUNCS))

    @cached_property
    def exps(self) -> dict:
        return {fn: np.array([m.dense(self.n_vars) for m in self.bases[fn]], dtype=np.int64)
                .reshape(len(self.bases[fn]), self.n_vars) for fn in FUNCS}

    @cached_property
    def max_degree(self) -> int:
        return int(max((e.sum(axis=1).max() if e.size else 0) for e in self.exps.values()))

    @cached_property
    def param_layout(self) -> list[tuple[str, int, int]]:
        out = [None] * self.n_rho
        for fn in FUNCS:
            for (i, k), p in np.ndenumerate(self.index[fn]):
                if p >= 0:
                    out[p] = (fn, i, k)
        return out

    def coefficients(self, rho) -> dict:
        """Coefficient matrices ``R[func]`` (n_coord, n_mono) for parameters ``rho``."""
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (self.n_rho,):
            raise DimensionError(f"rho has shape {rho.shape}, expected ({self.n_rho},)")
        out = {}
        for fn in FUNCS:
            idx = self.index[fn]
            out[fn] = np.where(idx >= 0, rho[np.maximum(idx, 0)], self.fixed[fn])
        return out

    def fingerprint(self) -> tuple:
        return (self.n_x, self.n_u, self.n_y,
                tuple(tuple(m.items for m in self.bases[fn]) for fn in FUNCS),
                tuple(self.index[fn].tobytes() for fn in FUNCS),
                tuple(self.fixed[fn].tobytes() for fn in FUNCS))

    # ---------------------------------------------------------------- features
    def features(self, fn: str, X: np.ndarray, U: np.ndarray, derivative: bool = True):
        """Monomial values ``Phi`` (N, n_mono) and x-gradients ``D`` (N, n_mono, n_x)."""
        Z = np.hstack([np.atleast_2d(X), np.atleast_2d(U).reshape(len(np.atleast_2d(X)), self.n_u)])
        return monomial_features(self.exps[fn], Z, self.n_x if derivative else 0)


def monomial_features(exps: np.ndarray, Z: np.ndarray, n_diff: int):
    """Evaluate monomials (rows of ``exps``) at rows of ``Z`` and their gradients
    with respect to the first ``n_diff`` variables."""
    N, nv = Z.shape
    nm = exps.shape[0]
    maxd = int(exps.max()) if exps.size else 0
    pw = np.ones((nv, maxd + 1, N))
    for p in range(1, maxd + 1):
        pw[:, p, :] = pw[:, p - 1, :] * Z.T
    Phi = np.ones((nm, N))
    for v in range(nv):
        Phi *= pw[v, exps[:, v], :]
    if n_diff == 0:
        return Phi.T, None
    D = np.zeros((N, nm, n_diff))
    for j in range(n_diff):
        ej = exps[:, j]
        rows = np.nonzero(ej)[0]
        if rows.size == 0:
            continue
        val = np.ones((rows.size, N)) * ej[rows, None]
        for v in range(nv):
            e = exps[rows, v] - (1 if v == j else 0)
            val *= pw[v, e, :]
        D[:, rows, j] = val.T
    return Phi.T, D


# ---------------------------------------------------------------------- data


@dataclass
class Dataset:
    u: np.ndarray
    y: np.ndarray
    x: Optional[np.ndarray] = None
    sample_time: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.u.ndim == 1:
            self.u = self.u[:, None]
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        T = self.u.shape[0]
        if T < 2:
            raise DimensionError("a dataset needs at least two samples")
        if self.y.shape[0] != T:
            raise DimensionError(f"u has {T} rows but y has {self.y.shape[0]}")
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=float)
            if self.x.ndim == 1:
                self.x = self.x[:, None]
            if self.x.shape[0] != T:
                raise DimensionError(f"x has {self.x.shape[0]} rows, expected {T}")

    @property
    def T(self) -> int:
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    def require_states(self) -> np.ndarray:
        if self.x is None:
            raise MissingStates("this operation needs surrogate states x~")
        return self.x

    def fingerprint(self) -> tuple:
        x = b"" if self.x is None else self.x.tobytes()
        return (self.u.tobytes(), self.y.tobytes(), x)


@dataclass(frozen=True)
class Residuals:
    eps: np.ndarray  # (T-1, n_x)
    eta: np.ndarray  # (T, n_y)


def _check_dims(ms: ModelStructure, x, u):
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.size != ms.n_x or u.size != ms.n_u:
        raise DimensionError(f"expected x of size {ms.n_x} and u of size {ms.n_u}")
    return x, u


def eval_efg(ms: ModelStructure, rho, x, u):
    x, u = _check_dims(ms, x, u)
    R = ms.coefficients(rho)
    out = []
    for fn in FUNCS:
        Phi, _ = ms.features(fn, x[None], u[None], derivative=False)
        out.append(R[fn] @ Phi[0])
    return tuple(out)


def jacobians(ms: ModelStructure, rho, x, u):
    """``E = de/dx``, ``F = df/dx``, ``G = dg/dx`` at one point."""
    x, u = _check_dims(ms, x, u)
    R = ms.coefficients(rho)
    out = []
    for fn in FUNCS:
        _, D = ms.features(fn, x[None], u[None])
        out.append(R[fn] @ D[0])
    return tuple(out)


class _Evaluator:
    """Pre-bound single-point evaluation of e and E for the root solver."""

    def __init__(self, ms: ModelStructure, rho):
        self.ms = ms
        R = ms.coefficients(rho)
        self.R = R
        self.exps = {fn: ms.exps[fn] for fn in FUNCS}
        self.u0 = np.zeros((1, ms.n_u))

    def e_and_E(self, s):
        Phi, D = monomial_features(self.exps["e"], np.concatenate([s, self.u0[0]])[None], self.ms.n_x)
        return self.R["e"] @ Phi[0], self.R["e"] @ D[0]

    def f(self, x, u):
        Phi, _ = monomial_features(self.exps["f"], np.concatenate([x, u])[None], 0)
        return self.R["f"] @ Phi[0]

    def g(self, x, u):
        Phi, _ = monomial_features(self.exps["g"], np.concatenate([x, u])[None], 0)
        return self.R["g"] @ Phi[0]


def _newton_root(ev: _Evaluator, b, s0, root_tol=ROOT_TOL, max_iters=MAX_ROOT_ITERS):
    s = np.array(s0, dtype=float)
    val, E = ev.e_and_E(s)
    r = val - b
    rn = np.linalg.norm(r)
    for _ in range(max_iters):
        if np.max(np.abs(r)) <= root_tol:
            return s
        try:
            step = np.linalg.solve(E, r)
        except np.linalg.LinAlgError:
            raise NoConvergence("singular Jacobian of e during root solve") from None
        alpha = 1.0
        for _ in range(60):
            s_new = s - alpha * step
            val_new, E_new = ev.e_and_E(s_new)
            r_new = val_new - b
            rn_new = np.linalg.norm(r_new)
            if rn_new < rn or np.max(np.abs(r_new)) <= root_tol:
                break
            alpha *= 0.5
        else:
            raise NoConvergence("root solver line search stalled")
        s, r, rn, E = s_new, r_new, rn_new, E_new
    if np.max(np.abs(r)) <= root_tol:
        return s
    raise NoConvergence(f"e(s) = b not solved to {root_tol:g} in {max_iters} iterations")


def implicit_step(ms: ModelStructure, rho, b, s0=None, root_tol=ROOT_TOL, max_iters=MAX_ROOT_ITERS):
    """Solve ``e(s) = b`` by damped Newton with residual halving."""
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.size != ms.n_x:
        raise DimensionError(f"b has size {b.size}, expected {ms.n_x}")
    ev = _Evaluator(ms, rho)
    s0 = np.zeros(ms.n_x) if s0 is None else s0
    return _newton_root(ev, b, s0, root_tol, max_iters)


def simulate(ms: ModelStructure, rho, x1, u, root_tol=ROOT_TOL, max_iters=MAX_ROOT_ITERS,
             diverge_at=np.inf):
    """Open-loop simulation. Returns states (T, n_x) and outputs (T, n_y).

    Raises NoConvergence (with ``.t`` set) if a root solve fails or the state
    norm exceeds ``diverge_at``.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    T = u.shape[0]
    if u.shape[1] != ms.n_u:
        raise DimensionError(f"u has {u.shape[1]} columns, expected {ms.n_u}")
    ev = _Evaluator(ms, rho)
    X = np.zeros((T, ms.n_x))
    Y = np.zeros((T, ms.n_y))
    X[0] = np.asarray(x1, dtype=float).reshape(-1)
    for t in range(T):
        Y[t] = ev.g(X[t], u[t])
        if t + 1 == T:
            break
        b = ev.f(X[t], u[t])
        try:
            X[t + 1] = _newton_root(ev, b, X[t], root_tol, max_iters)
        except NoConvergence as exc:
            raise NoConvergence(f"simulation failed at t={t + 1}: {exc}", t=t + 1) from None
        if not np.all(np.isfinite(X[t + 1])) or np.max(np.abs(X[t + 1])) > diverge_at:
            raise NoConvergence(f"simulation diverged at t={t + 1}", t=t + 1)
    return X, Y


def residuals(ms: ModelStructure, rho, data: Dataset) -> Residuals:
    X = data.require_states()
    R = ms.coefficients(rho)
    Pe, _ = ms.features("e", X, data.u, derivative=False)
    Pf, _ = ms.features("f", X, data.u, derivative=False)
    Pg, _ = ms.features("g", X, data.u, derivative=False)
    eps = Pf[:-1] @ R["f"].T - Pe[1:] @ R["e"].T
    eta = Pg @ R["g"].T - data.y
    return Residuals(eps, eta)


def jacobian_blocks(ms: ModelStructure, rho, X, U):
    """Per-sample Jacobians E (N, nx, nx), F (N, nx, nx), G (N, ny, nx)."""
    R = ms.coefficients(rho)
    out = []
    for fn in FUNCS:
        _, D = ms.features(fn, X, U)
        out.append(np.einsum("ck,tkj->tcj", R[fn], D))
    return tuple(out)


def linearized_sim_error(ms: ModelStructure, rho, data: Dataset) -> float:
    """J0: outputs of the linearized error recursion driven by equation errors."""
    X = data.require_states()
    res = residuals(ms, rho, data)
    E, F, G = jacobian_blocks(ms, rho, X, data.u)
    T = data.T
    delta = np.zeros(ms.n_x)
    total = float(np.sum((G[0] @ delta + res.eta[0]) ** 2))
    for t in range(T - 1):
        lu, piv = scipy.linalg.lu_factor(E[t + 1], check_finite=False)
        if np.any(np.abs(np.diag(lu)) <= 1e-14 * max(1.0, np.abs(E[t + 1]).max())):
            raise SingularJacobian(f"E is singular at t={t + 2}", t=t + 1)
        delta = scipy.linalg.lu_solve((lu, piv), F[t] @ delta + res.eps[t], check_finite=False)
        total += float(np.sum((G[t + 1] @ delta + res.eta[t + 1]) ** 2))
    return total


def initial_state(ms: ModelStructure, data: Dataset, x1=None) -> np.ndarray:
    if x1 is not None:
        return np.asarray(x1, dtype=float).reshape(ms.n_x)
    if data.x is not None:
        return data.x[0].copy()
    return np.zeros(ms.n_x)


def sim_error(ms: ModelStructure, rho, data: Dataset, x1=None) -> float:
    """J: squared output error of the open-loop simulation from ``x1``."""
    _, Y = simulate(ms, rho, initial_state(ms, data, x1), data.u)
    return float(np.sum((data.y - Y) ** 2))


@dataclass
class Model:
    """A fitted model: structure, parameters and the stability certificate."""

    structure: ModelStructure
    rho: np.ndarray
    P: np.ndarray
    mu: float
    Q: Optional[np.ndarray] = None

    def simulate(self, x1, u, **kw):
        return simulate(self.structure, self.rho, x1, u, **kw)

    def linear_matrices(self):
        """(E, F, K, C, D) for linear structures."""
        ms = self.structure
        if ms.kind != "linear":
            raise ValueError("linear_matrices needs a linear structure")
        R = ms.coefficients(self.rho)
        n = ms.n_x
        return R["e"], R["f"][:, :n], R["f"][:, n:], R["g"][:, :n], R["g"][:, n:]


def linear_rho(E, F, K, C, D) -> np.ndarray:
    """Stack linear-model matrices in the layout used by ``ModelStructure.linear``."""
    return np.concatenate([np.asarray(M, float).ravel(order="F") for M in (E, F, K, C, D)])


def spectral_radius(M) -> float:
    M = np.asarray(M, float)
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0
