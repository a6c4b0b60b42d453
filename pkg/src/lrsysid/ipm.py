"""Path-following log-det barrier method over an affine LMI with equalities.

Iterates live in nullspace coordinates ``theta(nu) = theta_0 + N_e nu`` and
minimize ``f_tau(nu) = J(theta(nu)) - tau * logdet S(theta(nu))`` for a
geometrically decreasing ``tau``. Every accepted iterate keeps ``S`` positive
definite.

An objective oracle is any callable ``oracle(theta, order) -> (value, grad,
hess_block)`` with attributes ``hess_block`` (a slice of theta holding all of
the Hessian's nonzeros) and ``convex``.
"""
from __future__ import annotations

import dataclasses
import functools
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import linalg
from .errors import LineSearchFailed, NotDefinite, NotInDomain, TimeBudgetExceeded
from .stability import ConstraintSystem, FeasiblePoint

log = logging.getLogger(__name__)
steplog = logging.getLogger(__name__ + ".steps")


@dataclass(frozen=True)
class SolverOptions:
    tau0: float = 1e4
    beta: float = 10.0
    delta_f: float = 1e-10
    delta_g: float = 1e-10
    delta_J: float = 1e-11
    maxit: int = 10_000
    tau_min: float = 1e-9
    c1: float = 1e-4
    c2: float = 0.9
    backtrack: float = 0.5
    max_backtracks: int = 60
    hess_mod_floor: float = 1e-12
    time_budget: Optional[float] = None
    check_feasibility: bool = False

    def __post_init__(self):
        if not self.tau0 > 0 or not self.beta > 1:
            raise ValueError("need tau0 > 0 and beta > 1")
        for name in ("delta_f", "delta_g", "delta_J", "tau_min", "hess_mod_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if not 0 < self.backtrack < 1 or self.maxit < 1 or self.max_backtracks < 1:
            raise ValueError("invalid line search or iteration limits")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SolveReport:
    theta: np.ndarray
    objective_trace: list = field(default_factory=list)  # oracle value after each centering
    taus: list = field(default_factory=list)
    newton_steps: list = field(default_factory=list)  # per centering
    step_wall_times_us: list = field(default_factory=list)
    termination: str = ""
    margin: float = float("nan")
    initial_objective: float = float("nan")
    tau_min_reached: bool = False
    options_echo: dict = field(default_factory=dict)

    @property
    def total_newton_steps(self) -> int:
        return int(sum(self.newton_steps))

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else self.initial_objective

    def to_dict(self) -> dict:
        return {
            "theta": [float(v) for v in self.theta],
            "objective_trace": [float(v) for v in self.objective_trace],
            "taus": [float(v) for v in self.taus],
            "newton_steps": [int(v) for v in self.newton_steps],
            "step_wall_times_us": [float(v) for v in self.step_wall_times_us],
            "termination": self.termination,
            "margin": float(self.margin),
            "initial_objective": float(self.initial_objective),
            "tau_min_reached": bool(self.tau_min_reached),
            "options_echo": dict(self.options_echo),
        }


# ---------------------------------------------------------------------- barrier


def _whitened(S: np.ndarray, stack: np.ndarray):
    """Cholesky of S and Y_j = L^{-1} S_j L^{-T} for every S_j in ``stack``."""
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NotInDomain("S(theta) is not positive definite") from None
    Li = scipy.linalg.solve_triangular(L, np.eye(S.shape[0]), lower=True, check_finite=False)
    return L, Li @ stack @ Li.T


@functools.lru_cache(maxsize=32)
def _triu_weights(n: int):
    iu, ju = np.triu_indices(n)
    return iu, ju, np.where(iu == ju, 1.0, np.sqrt(2.0))


def barrier_value(cs: ConstraintSystem, theta) -> float:
    try:
        L = np.linalg.cholesky(cs.S(theta))
    except np.linalg.LinAlgError:
        raise NotInDomain("S(theta) is not positive definite") from None
    return -2.0 * float(np.sum(np.log(np.diag(L))))


def barrier_nu(S: np.ndarray, stack: np.ndarray, order: int = 2):
    """phi = -logdet S with gradient/Hessian in the coordinates of ``stack``."""
    if order == 0:
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise NotInDomain("S(theta) is not positive definite") from None
        return -2.0 * float(np.sum(np.log(np.diag(L)))), None, None
    L, Y = _whitened(S, stack)
    phi = -2.0 * float(np.sum(np.log(np.diag(L))))
    g = -np.trace(Y, axis1=1, axis2=2)
    H = None
    if order >= 2:
        # H_jk = <Y_j, Y_k>; Y_j symmetric, so use weighted upper triangles
        iu, ju, w = _triu_weights(Y.shape[1])
        Yv = Y[:, iu, ju] * w
        H = Yv @ Yv.T
    return phi, g, H


def _add_linear_barrier(phi, g, H, slack, Gm, order):
    """Add ``-sum log(slack)`` where ``slack = h - Gm x`` (derivatives in x)."""
    if np.any(slack <= 0):
        raise NotInDomain("linear inequality bound violated")
    phi = phi - float(np.sum(np.log(slack)))
    if order >= 1:
        g = g + Gm.T @ (1.0 / slack)
    if order >= 2:
        Gs = Gm / slack[:, None]
        H = H + Gs.T @ Gs
    return phi, g, H


def barrier_eval(cs: ConstraintSystem, theta):
    """(phi, gradient over theta, Hessian over theta) of ``-logdet S(theta)``
    plus ``-sum log(h - G theta)`` for any extra inequalities."""
    theta = np.asarray(theta, float)
    phi, ga, Ha = barrier_nu(cs.S(theta), cs.active_stack, 2)
    g = np.zeros(cs.n_theta)
    H = np.zeros((cs.n_theta, cs.n_theta))
    act = cs.active
    g[act] = ga
    H[np.ix_(act, act)] = Ha
    if cs.n_ineq:
        phi, g, H = _add_linear_barrier(phi, g, H, cs.ineq_slack(theta), cs.ineq_G, 2)
    return phi, g, H


# ---------------------------------------------------------------------- Newton pieces


def newton_direction(H: np.ndarray, g: np.ndarray, floor: float = 1e-12):
    """Solve ``(H + delta I) d = -g`` with the smallest delta in {0, floor, 10 floor, ...}
    whose Cholesky factorization has all pivots >= floor."""
    n = g.size
    delta = 0.0
    while True:
        try:
            fac = linalg.sym_factor(H + delta * np.eye(n) if delta else H, floor=floor)
            d = -linalg.sym_solve(fac, g)
            if np.all(np.isfinite(d)):
                return d, delta
        except NotDefinite:
            pass
        delta = floor if delta == 0.0 else 10.0 * delta
        if delta > 1e30:
            return -g, np.inf


@dataclass(frozen=True)
class LineSearchResult:
    alpha: float
    value: float
    payload: object = None
    curvature_ok: bool = True
    trials: int = 0


def wolfe_backtrack(phi: Callable, f0: float, g0: float, opts: SolverOptions = SolverOptions(),
                    convex: bool = True) -> LineSearchResult:
    """Backtracking search for weak Wolfe conditions along a descent direction.

    ``phi(alpha)`` returns ``(value, slope, payload)``; it may return an infinite
    value or raise NotDefinite outside the domain. If no trial meets the
    curvature condition the largest Armijo point is returned; for convex
    objectives that point is final because the slope only decreases as alpha
    shrinks.
    """
    if not g0 < 0:
        raise ValueError("line search needs a descent direction (g0 < 0)")
    alpha = 1.0
    first_armijo = None
    for k in range(opts.max_backtracks + 1):
        try:
            val, slope, payload = phi(alpha)
        except NotDefinite:
            val, slope, payload = np.inf, None, None
        if np.isfinite(val) and val <= f0 + opts.c1 * alpha * g0:
            curv = slope is None or slope >= opts.c2 * g0
            if curv:
                return LineSearchResult(alpha, val, payload, True, k + 1)
            if first_armijo is None:
                first_armijo = LineSearchResult(alpha, val, payload, False, k + 1)
            if convex:
                return first_armijo
        alpha *= opts.backtrack
    if first_armijo is not None:
        return first_armijo
    raise LineSearchFailed(f"no step satisfied the Armijo condition in {opts.max_backtracks} halvings")


def chain_to_nu(cs: ConstraintSystem, g_theta, H_theta=None, block: slice = None):
    """Map theta-space derivatives to nullspace coordinates.

    ``H_theta`` may be the sub-block on ``block`` when all other entries are zero.
    """
    N = cs.N_e
    g = N.T @ np.asarray(g_theta, float)
    if H_theta is None:
        return g, None
    Nb = N if block is None else N[block]
    return g, Nb.T @ H_theta @ Nb


# ---------------------------------------------------------------------- solver


class _Problem:
    """f_tau and its derivatives in nullspace coordinates."""

    def __init__(self, oracle, cs: ConstraintSystem, theta0: np.ndarray):
        self.oracle, self.cs, self.theta0 = oracle, cs, theta0
        self.N = cs.N_e
        blk = getattr(oracle, "hess_block", slice(0, cs.n_theta))
        self.Nb = self.N[blk]
        self.stack = cs.nu_stack()
        self.GN = None if cs.ineq_G is None else cs.ineq_G @ self.N

    def theta(self, nu):
        return self.theta0 + self.N @ nu

    def eval(self, nu, tau, order):
        th = self.theta(nu)
        # barrier first: cheap, and rejects out-of-domain trials early
        phi, gb, Hb = barrier_nu(self.cs.S(th), self.stack, order)
        if self.GN is not None:
            phi, gb, Hb = _add_linear_barrier(phi, gb, Hb, self.cs.ineq_slack(th), self.GN, order)
        val, gJ, HJ = self.oracle(th, order)
        f = val + tau * phi
        g = H = None
        if order >= 1:
            g = self.N.T @ gJ + tau * gb
        if order >= 2:
            H = self.Nb.T @ HJ @ self.Nb + tau * Hb
            H = 0.5 * (H + H.T)
        return f, g, H, val


def solve(oracle, cs: ConstraintSystem, theta_init, opts: SolverOptions = SolverOptions(),
          stop_when: Optional[Callable] = None) -> SolveReport:
    """Minimize ``oracle`` over ``{theta : S(theta) >= 0, A_e theta = b_e}``."""
    theta0 = np.asarray(theta_init.theta if isinstance(theta_init, FeasiblePoint) else theta_init,
                        float).copy()
    prob = _Problem(oracle, cs, theta0)
    convex = bool(getattr(oracle, "convex", True))
    nu = np.zeros(cs.n_nu)
    outer = 0
    tau = opts.tau0
    report = SolveReport(theta0.copy(), options_echo=opts.to_dict())
    t_start = time.perf_counter()

    J = prob.eval(nu, tau, 0)[3]
    report.initial_objective = J
    J_prev = None
    done = False
    while not done:
        steps = 0
        while steps < opts.maxit:
            t0 = time.perf_counter()
            f, g, H, J = prob.eval(nu, tau, 2)
            if np.max(np.abs(g)) < opts.delta_g:
                break
            d, _ = newton_direction(H, g, opts.hess_mod_floor)
            slope0 = float(g @ d)
            if -slope0 <= 1e-13 * (1.0 + abs(f)):
                break

            def phi(alpha, d=d):
                fa, ga, _, Ja = prob.eval(nu + alpha * d, tau, 1)
                return fa, float(ga @ d), Ja

            try:
                ls = wolfe_backtrack(phi, f, slope0, opts, convex)
            except LineSearchFailed:
                if -slope0 < 1e-9 * (1.0 + abs(f)):
                    break
                raise
            step = ls.alpha * d
            nu = nu + step
            steplog.debug("f=%.12g dec=%.3g alpha=%.3g trials=%d delta_f=%.3g", f, -slope0, ls.alpha,
                          ls.trials, f - ls.value)
            J = ls.payload
            steps += 1
            report.step_wall_times_us.append((time.perf_counter() - t0) * 1e6)
            if opts.check_feasibility:
                lam, _ = linalg.eig_extremes(cs.S(prob.theta(nu)))
                assert lam > 0, "iterate left the feasible set"
            if opts.time_budget is not None and time.perf_counter() - t_start > opts.time_budget:
                raise TimeBudgetExceeded(f"time budget {opts.time_budget:g}s exceeded")
            if stop_when is not None and stop_when(prob.theta(nu)):
                report.termination = "stop_condition"
                done = True
                break
            if abs(f - ls.value) < opts.delta_f or np.max(np.abs(step)) < opts.delta_f:
                break
        else:
            report.termination = "maxit"
        report.objective_trace.append(J)
        report.taus.append(tau)
        report.newton_steps.append(steps)
        log.debug("tau=%.3g steps=%d J=%.10g f=%.10g", tau, steps, J, f)
        if done:
            break
        if J_prev is not None and abs(J - J_prev) < opts.delta_J:
            report.termination = "converged"
            break
        J_prev = J
        outer += 1
        tau = opts.tau0 / opts.beta ** outer
        if tau < opts.tau_min:
            report.termination = "tau_min"
            report.tau_min_reached = True
            break

    report.theta = prob.theta(nu)
    report.margin, _ = linalg.eig_extremes(cs.S(report.theta))
    return report
