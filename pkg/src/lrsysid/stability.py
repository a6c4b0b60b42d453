"""Convex sets of stable models.

The contraction LMI ``M(rho, P, x, u) >= 0`` is imposed either exactly (linear
models) or through a sum-of-squares certificate ``v' M v = w(z)' Q w(z)`` with
``Q >= 0``. Both are expressed as a :class:`ConstraintSystem`::

    S(theta) = mat(A_s theta + s0) >= 0,   A_e theta = b_e

with ``theta = [rho; s2v(P); s2v(Q)]``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import linalg
from .errors import Infeasible, InfeasibleEqualities, NotDefinite
from .models import ModelStructure
from .polyalg import (AffineCoeff, Monomial, Polynomial, coeff_match, monomials_up_to,
                      poly_mul, poly_partial, poly_sum)

DEFAULT_MU = 1e-3
FEAS_MARGIN = 1e-6


def s2v_index(i: int, j: int) -> int:
    """Position of entry (i, j) of a symmetric matrix in its s2v stacking."""
    if i > j:
        i, j = j, i
    return j * (j + 1) // 2 + i


def s2v(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    return np.array([M[i, j] for j in range(n) for i in range(j + 1)])


def v2s(v: np.ndarray, n: int) -> np.ndarray:
    M = np.zeros((n, n))
    for j in range(n):
        for i in range(j + 1):
            M[i, j] = M[j, i] = v[s2v_index(i, j)]
    return M


@dataclass(frozen=True)
class ThetaLayout:
    n_rho: int
    n_x_P: int  # side of P (0 when there is no P block)
    n_omega: int  # side of Q (0 when there is no Gram block)

    @property
    def n_P(self) -> int:
        return self.n_x_P * (self.n_x_P + 1) // 2

    @property
    def n_Q(self) -> int:
        return self.n_omega * (self.n_omega + 1) // 2

    @property
    def P_offset(self) -> int:
        return self.n_rho

    @property
    def Q_offset(self) -> int:
        return self.n_rho + self.n_P

    @property
    def n_theta(self) -> int:
        return self.n_rho + self.n_P + self.n_Q

    def P_index(self, i, j) -> int:
        return self.P_offset + s2v_index(i, j)

    def Q_index(self, i, j) -> int:
        return self.Q_offset + s2v_index(i, j)

    def rho(self, theta):
        return np.asarray(theta)[: self.n_rho]

    def P(self, theta) -> np.ndarray:
        return v2s(np.asarray(theta)[self.P_offset:self.Q_offset], self.n_x_P)

    def Q(self, theta) -> np.ndarray:
        return v2s(np.asarray(theta)[self.Q_offset:self.n_theta], self.n_omega)


@dataclass(frozen=True)
class ConstraintSystem:
    """Affine LMI plus linear equalities; the feasible set Theta."""

    A_s: sp.csr_matrix  # (n_S^2, n_theta), column-major vec
    s0: np.ndarray  # (n_S^2,)
    n_S: int
    A_e: sp.csr_matrix  # (m, n_theta)
    b_e: np.ndarray
    N_e: np.ndarray  # (n_theta, n_nu) orthonormal
    theta_star: np.ndarray
    mu: float
    layout: ThetaLayout
    omega: tuple = ()  # Gram basis (Monomials over z); empty for exact LMIs
    n_z: int = 0
    meta: dict = field(default_factory=dict)
    # optional extra linear inequalities ineq_G theta <= ineq_h (kept out of S)
    ineq_G: Optional[np.ndarray] = None
    ineq_h: Optional[np.ndarray] = None

    @property
    def n_theta(self) -> int:
        return self.A_s.shape[1]

    @property
    def n_nu(self) -> int:
        return self.N_e.shape[1]

    def S(self, theta) -> np.ndarray:
        vec = self.A_s @ np.asarray(theta, dtype=float) + self.s0
        M = vec.reshape(self.n_S, self.n_S, order="F")
        return 0.5 * (M + M.T)

    @cached_property
    def active(self) -> np.ndarray:
        """Indices of theta entering S(theta)."""
        return np.unique(self.A_s.tocoo().col)

    @cached_property
    def active_stack(self) -> np.ndarray:
        """Dense coefficient matrices dS/dtheta_a for active a, shape (m, n_S, n_S)."""
        cols = self.A_s[:, self.active].toarray()
        return cols.T.reshape(len(self.active), self.n_S, self.n_S).transpose(0, 2, 1).copy()

    def nu_stack(self, N: Optional[np.ndarray] = None) -> np.ndarray:
        """dS/dnu_j for theta = theta0 + N nu, shape (n_nu, n_S, n_S)."""
        N = self.N_e if N is None else N
        Nact = N[self.active]
        return np.einsum("aj,akl->jkl", Nact, self.active_stack)

    @property
    def n_ineq(self) -> int:
        return 0 if self.ineq_G is None else self.ineq_G.shape[0]

    def ineq_slack(self, theta) -> np.ndarray:
        if self.ineq_G is None:
            return np.zeros(0)
        return self.ineq_h - self.ineq_G @ np.asarray(theta, float)

    def equality_residual(self, theta) -> float:
        if self.A_e.shape[0] == 0:
            return 0.0
        return float(np.max(np.abs(self.A_e @ theta - self.b_e)))


@dataclass(frozen=True)
class FeasiblePoint:
    theta: np.ndarray
    margin: float


# --------------------------------------------------------------------------- assembly


def _finish(A_s_trip, s0_entries, n_S, rows, n_theta, layout, mu, omega=(), n_z=0, meta=None):
    """Assemble sparse matrices, nullspace basis and a particular solution."""
    r, c, w = [], [], []
    for (i, j), coeff in A_s_trip.items():
        for k, wt in coeff.linear.items():
            for (a, b) in {(i, j), (j, i)}:
                r.append(b * n_S + a)
                c.append(k)
                w.append(wt)
    A_s = sp.csr_matrix((w, (r, c)), shape=(n_S * n_S, n_theta))
    A_s.sum_duplicates()
    s0 = np.zeros(n_S * n_S)
    for (i, j), coeff in A_s_trip.items():
        if coeff.constant:
            s0[j * n_S + i] = coeff.constant
            s0[i * n_S + j] = coeff.constant
    for (i, j), val in (s0_entries or {}).items():
        s0[j * n_S + i] += val
        if i != j:
            s0[i * n_S + j] += val

    er, ec, ew, b = [], [], [], []
    for ri, (row, rhs) in enumerate(rows):
        for k, wt in row.items():
            er.append(ri)
            ec.append(k)
            ew.append(wt)
        b.append(rhs)
    A_e = sp.csr_matrix((ew, (er, ec)), shape=(len(rows), n_theta))
    b_e = np.array(b, dtype=float)
    N_e, theta_star = equality_solution(A_e, b_e, n_theta)
    return ConstraintSystem(A_s, s0, n_S, A_e, b_e, N_e, theta_star, mu, layout,
                            tuple(omega), n_z, dict(meta or {}))


def equality_solution(A_e, b_e, n_theta, rtol=1e-10):
    """Orthonormal nullspace of A_e and the min-norm solution of A_e theta = b_e."""
    if A_e.shape[0] == 0:
        return np.eye(n_theta), np.zeros(n_theta)
    A = A_e.toarray()
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    theta = Vt[:rank].T @ ((U[:, :rank].T @ b_e) / s[:rank])
    resid = np.max(np.abs(A @ theta - b_e)) if b_e.size else 0.0
    if resid > 1e-10 * max(1.0, np.max(np.abs(b_e))):
        raise InfeasibleEqualities(f"equality constraints inconsistent (residual {resid:.3e})")
    return Vt[rank:].T.copy(), theta


def _param_poly(ms: ModelStructure, fn: str, coord: int, n_z: int) -> Polynomial:
    """Polynomial for coordinate ``coord`` of function ``fn`` in z = (x, u, ...)."""
    idx, fixed = ms.index[fn], ms.fixed[fn]
    terms = {}
    for k, m in enumerate(ms.bases[fn]):
        p = idx[coord, k]
        terms[m] = AffineCoeff.param(int(p)) if p >= 0 else AffineCoeff(constant=fixed[coord, k])
    return Polynomial(terms, n_z)


def _jacobian_polys(ms: ModelStructure, fn: str, n_z: int):
    n_coord = ms.n_y if fn == "g" else ms.n_x
    out = []
    for i in range(n_coord):
        pi = _param_poly(ms, fn, i, n_z)
        out.append([poly_partial(pi, j) for j in range(ms.n_x)])
    return out


def _vv(a: int, b: int, n_z: int) -> Polynomial:
    return Polynomial.monomial(Monomial([(a, 1), (b, 1)]), n_z)


def build_contraction_poly(ms: ModelStructure, mu: float, layout: Optional[ThetaLayout] = None
                           ) -> Polynomial:
    """``p(z) = v' M v`` with M the Schur-complement form of the contraction condition.

    ``z = (x, u, v)`` with ``v`` of size ``2 n_x + n_y``.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    nx, ny = ms.n_x, ms.n_y
    layout = layout or ThetaLayout(ms.n_rho, nx, 0)
    v0 = ms.n_vars
    n_z = v0 + 2 * nx + ny
    E = _jacobian_polys(ms, "e", n_z)
    F = _jacobian_polys(ms, "f", n_z)
    G = _jacobian_polys(ms, "g", n_z)

    def Pc(i, j):
        return Polynomial({Monomial(): AffineCoeff.param(layout.P_index(i, j))}, n_z)

    parts = []
    for a in range(nx):
        for b in range(a, nx):
            m11 = E[a][b] + E[b][a] - Pc(a, b)
            if a == b:
                m11 = m11 - Polynomial.constant(mu, n_z)
            parts.append(poly_mul(_vv(v0 + a, v0 + b, n_z), m11.scale(1.0 if a == b else 2.0)))
            parts.append(poly_mul(_vv(v0 + nx + a, v0 + nx + b, n_z), Pc(a, b).scale(1.0 if a == b else 2.0)))
        for b in range(nx):
            # M[a, nx + b] = F'[a, b] = F[b][a]
            parts.append(poly_mul(_vv(v0 + a, v0 + nx + b, n_z), F[b][a].scale(2.0)))
        for c in range(ny):
            parts.append(poly_mul(_vv(v0 + a, v0 + 2 * nx + c, n_z), G[c][a].scale(2.0)))
    for c in range(ny):
        parts.append(_vv(v0 + 2 * nx + c, v0 + 2 * nx + c, n_z))
    return poly_sum(parts, n_z)


def select_basis(p: Polynomial, xu_vars: range, v_vars: range, prune: bool = True) -> list[Monomial]:
    """Gram basis ``v_i * m(x, u)`` for a polynomial quadratic in ``v``.

    Candidates use half the largest (x, u)-degree seen alongside each ``v_i``;
    elements whose square cannot appear in ``p`` (neither as a term of ``p`` nor
    as a cross product of two other retained elements) are pruned to a fixpoint.
    """
    supp = set(p.support())
    deg = {}
    for m in supp:
        dxu = m.degree_in(xu_vars)
        for v, e in m.items:
            if v in v_vars:
                deg[v] = max(deg.get(v, 0), dxu)
    n_xu = len(xu_vars)
    cand = []
    for v in v_vars:
        if v not in deg:
            continue
        half = math.ceil(deg[v] / 2)
        ms_ = monomials_up_to(n_xu, half, offset=xu_vars.start) if n_xu else [Monomial()]
        # highest (x, u)-degree first within each v block
        cand.extend(Monomial({v: 1}) * m for m in reversed(ms_))

    retained = list(cand)
    while prune:
        sums = {}
        for a in range(len(retained)):
            for b in range(a + 1, len(retained)):
                s = retained[a] * retained[b]
                sums[s] = sums.get(s, 0) + 1
        keep = [w for w in retained if (w * w) in supp or (w * w) in sums]
        if len(keep) == len(retained):
            break
        retained = keep
    return retained


def gram_poly(omega, layout: ThetaLayout, n_z: int) -> Polynomial:
    """``w' Q w`` with off-diagonal Gram entries weighted twice."""
    acc = {}
    n = len(omega)
    for j in range(n):
        for i in range(j + 1):
            m = omega[i] * omega[j]
            c = AffineCoeff.param(layout.Q_index(i, j), 1.0 if i == j else 2.0)
            acc[m] = acc[m] + c if m in acc else c
    return Polynomial(acc, n_z)


def sos_system(p: Polynomial, n_rho: int, n_x_P: int, xu_vars: range, v_vars: range,
               mu: float, meta=None, prune: bool = True) -> ConstraintSystem:
    """Gram-matrix constraint system certifying ``p`` is SOS."""
    omega = select_basis(p, xu_vars, v_vars, prune)
    layout = ThetaLayout(n_rho, n_x_P, len(omega))
    gram = gram_poly(omega, layout, p.n_vars)
    rows = coeff_match(gram, p)
    trip = {}
    for j in range(len(omega)):
        for i in range(j + 1):
            trip[(i, j)] = AffineCoeff.param(layout.Q_index(i, j))
    return _finish(trip, None, len(omega), rows, layout.n_theta, layout, mu, omega, p.n_vars, meta)


def assemble_sos(ms: ModelStructure, mu: float = DEFAULT_MU) -> ConstraintSystem:
    if mu <= 0:
        raise ValueError("mu must be positive")
    layout0 = ThetaLayout(ms.n_rho, ms.n_x, 0)
    p = build_contraction_poly(ms, mu, layout0)
    xu = range(0, ms.n_vars)
    v = range(ms.n_vars, p.n_vars)
    return sos_system(p, ms.n_rho, ms.n_x, xu, v, mu, meta=dict(kind="sos"))


def assemble_lti(n_x: int, n_u: int, n_y: int, mu: float = DEFAULT_MU) -> ConstraintSystem:
    """Exact LMI for linear models; theta = [vec E; vec F; vec K; vec C; vec D; s2v(P)]."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    ms = ModelStructure.linear(n_x, n_u, n_y)
    layout = ThetaLayout(ms.n_rho, n_x, 0)
    iE, iF, iG = ms.index["e"], ms.index["f"], ms.index["g"]
    n_S = 2 * n_x + n_y
    trip = {}

    def add(i, j, k, w):
        key = (i, j) if i <= j else (j, i)
        c = AffineCoeff({k: w})
        trip[key] = trip[key] + c if key in trip else c

    for a in range(n_x):
        for b in range(a, n_x):
            add(a, b, int(iE[a, b]), 1.0)
            add(a, b, int(iE[b, a]), 1.0)
            add(a, b, layout.P_index(a, b), -1.0)
            add(n_x + a, n_x + b, layout.P_index(a, b), 1.0)
        for b in range(n_x):
            add(a, n_x + b, int(iF[b, a]), 1.0)  # F' block
        for c in range(n_y):
            add(a, 2 * n_x + c, int(iG[c, a]), 1.0)  # C' block
    s0 = {(a, a): -mu for a in range(n_x)}
    s0.update({(2 * n_x + c, 2 * n_x + c): 1.0 for c in range(n_y)})
    return _finish(trip, s0, n_S, [], layout.n_theta, layout, mu, meta=dict(kind="lti"))


# --------------------------------------------------------------------------- feasibility


def membership(cs: ConstraintSystem, theta, eq_tol: float = 1e-8):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (cs.n_theta,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({cs.n_theta},)")
    margin, _ = linalg.eig_extremes(cs.S(theta))
    ok = cs.equality_residual(theta) <= eq_tol and margin >= 0.0
    return bool(ok), float(margin)


def augmented_system(cs: ConstraintSystem) -> ConstraintSystem:
    """``S(theta) + t I`` over ``[theta; t]`` for phase one."""
    n = cs.n_theta
    eye = sp.csr_matrix(np.eye(cs.n_S).reshape(-1, 1, order="F"))
    A_s = sp.hstack([cs.A_s, eye]).tocsr()
    A_e = sp.hstack([cs.A_e, sp.csr_matrix((cs.A_e.shape[0], 1))]).tocsr()
    N = np.zeros((n + 1, cs.n_nu + 1))
    N[:n, :cs.n_nu] = cs.N_e
    N[n, cs.n_nu] = 1.0
    G = None if cs.ineq_G is None else np.hstack([cs.ineq_G, np.zeros((cs.n_ineq, 1))])
    return ConstraintSystem(A_s, cs.s0, cs.n_S, A_e, cs.b_e, N, np.append(cs.theta_star, 0.0),
                            cs.mu, cs.layout, cs.omega, cs.n_z, dict(cs.meta, phase_one=True),
                            G, cs.ineq_h)


def with_bound(cs: ConstraintSystem, row: dict, h: float) -> ConstraintSystem:
    """Copy of ``cs`` with the extra inequality ``sum(row[i] theta[i]) <= h``."""
    g = np.zeros(cs.n_theta)
    for k, w in row.items():
        g[k] += w
    G = g[None] if cs.ineq_G is None else np.vstack([cs.ineq_G, g])
    h_ = np.array([h], float) if cs.ineq_h is None else np.append(cs.ineq_h, h)
    return dataclasses.replace(cs, ineq_G=G, ineq_h=h_)


def trace_bound_row(cs: ConstraintSystem) -> dict:
    """theta-weights of trace(P) for the metric block of ``cs``."""
    lay = cs.layout
    return {lay.P_index(i, i): 1.0 for i in range(lay.n_x_P)}


class _SlackObjective:
    """Slack ``t`` (last coordinate) plus a ball barrier ``-log(R^2 - |theta - c|^2)``.

    The ball keeps phase one bounded when the feasible set is unbounded.
    """

    convex = True

    def __init__(self, n, center, radius):
        self.n = n
        self.center = np.append(center, 0.0)
        self.R2 = float(radius) ** 2
        self.hess_block = slice(0, n)

    def __call__(self, theta, order=2):
        x = np.asarray(theta, float) - self.center
        x[-1] = 0.0
        s = self.R2 - float(x @ x)
        if s <= 0:
            raise NotDefinite("phase-one iterate left the bounding ball")
        val = float(theta[-1]) - np.log(s)
        g = H = None
        if order >= 1:
            g = 2.0 * x / s
            g[-1] += 1.0
        if order >= 2:
            H = 2.0 * np.eye(self.n) / s + 4.0 * np.outer(x, x) / s**2
            H[-1, -1] = 0.0
        return val, g, H


def phase_one(cs: ConstraintSystem, feas_margin: float = FEAS_MARGIN, opts=None,
              radius: Optional[float] = None) -> FeasiblePoint:
    """Strictly feasible point via the slack barrier problem on ``S(theta) + t I``.

    Iterates stay within ``radius`` (default ``10 (1 + |theta*|)``) of the
    particular solution.
    """
    from .ipm import SolverOptions, solve

    opts = opts or SolverOptions(tau0=1.0)
    lam_min, _ = linalg.eig_extremes(cs.S(cs.theta_star))
    if np.any(cs.ineq_slack(cs.theta_star) <= 0):
        raise Infeasible("the extra inequality bounds exclude the particular solution")
    if lam_min >= feas_margin and cs.equality_residual(cs.theta_star) <= 1e-10:
        return FeasiblePoint(cs.theta_star.copy(), lam_min)
    radius = 10.0 * (1.0 + np.linalg.norm(cs.theta_star)) if radius is None else radius
    t0 = max(0.0, -lam_min) + 1.0
    aug = augmented_system(cs)
    start = np.append(cs.theta_star, t0)
    report = solve(_SlackObjective(aug.n_theta, cs.theta_star, radius), aug, start, opts,
                   stop_when=lambda th: th[-1] < -feas_margin)
    theta = report.theta[:-1]
    ok, margin = membership(cs, theta)
    if report.termination != "stop_condition" or margin < feas_margin or not ok:
        raise Infeasible(f"phase one could not reach margin {feas_margin:g} "
                         f"(best slack {report.theta[-1]:.3e}, {report.termination})")
    return FeasiblePoint(theta, margin)


def max_step(cs: ConstraintSystem, theta, direction) -> float:
    """Largest alpha with S(theta + alpha d) >= 0 (inf if unbounded)."""
    S0 = cs.S(theta)
    L = np.linalg.cholesky(S0)
    Sd = cs.S(direction) - cs.S(np.zeros_like(direction))
    Li = np.linalg.inv(L)
    lam_min, _ = linalg.eig_extremes(Li @ Sd @ Li.T)
    return np.inf if lam_min >= 0 else -1.0 / lam_min


def random_interior_points(cs: ConstraintSystem, theta0, rng: np.random.Generator, n: int,
                           shrink: float = 0.9, cap: float = 10.0) -> list[np.ndarray]:
    """Random strictly feasible points along nullspace directions from ``theta0``."""
    pts = []
    for _ in range(n):
        d = cs.N_e @ rng.standard_normal(cs.n_nu)
        d /= np.linalg.norm(d)
        amax = min(max_step(cs, theta0, d), cap)
        pts.append(theta0 + shrink * rng.uniform(0.05, 1.0) * amax * d)
    return pts


def contraction_matrix(ms: ModelStructure, rho, P, mu, x, u) -> np.ndarray:
    """M(rho, P, x, u) evaluated directly from Jacobians."""
    from .models import jacobians

    E, F, G = jacobians(ms, rho, x, u)
    nx, ny = ms.n_x, ms.n_y
    M = np.zeros((2 * nx + ny, 2 * nx + ny))
    M[:nx, :nx] = E + E.T - P - mu * np.eye(nx)
    M[:nx, nx:2 * nx] = F.T
    M[nx:2 * nx, :nx] = F
    M[:nx, 2 * nx:] = G.T
    M[2 * nx:, :nx] = G
    M[nx:2 * nx, nx:2 * nx] = P
    M[2 * nx:, 2 * nx:] = np.eye(ny)
    return M


def dump_constraint_system(cs: ConstraintSystem) -> dict:
    Ae = cs.A_e.tocoo()
    As = cs.A_s.tocoo()
    return {
        "n_theta": cs.n_theta,
        "n_S": cs.n_S,
        "mu": cs.mu,
        "A_e": [[int(r), int(c), float(v)] for r, c, v in zip(Ae.row, Ae.col, Ae.data)],
        "b_e": [float(b) for b in cs.b_e],
        "omega": [list(m.dense(cs.n_z)) for m in cs.omega],
        "A_s": [[int(r), int(c), float(v)] for r, c, v in zip(As.row, As.col, As.data)],
        "s0": [float(s) for s in cs.s0],
    }
