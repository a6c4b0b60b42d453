"""End-to-end fitting: Lagrangian relaxation, equation error, stable subspace baseline."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import NoConvergence
from .ipm import SolveReport, SolverOptions, solve
from .lagrangian import LagrangianOracle, lifted_features
from .models import Dataset, Model, ModelStructure, initial_state, simulate, spectral_radius
from .polyalg import AffineCoeff, Monomial, Polynomial, poly_mul, poly_partial, poly_sum
from .stability import (DEFAULT_MU, ConstraintSystem, ThetaLayout, _finish, assemble_lti,
                        assemble_sos, membership, phase_one, sos_system, trace_bound_row,
                        with_bound)

DIVERGENCE_LIMIT = 1e8
DEFAULT_SCALE_BOUND = 100.0


class Validation(NamedTuple):
    error: float
    diverged: bool


@dataclass
class FitResult:
    method: str
    model: Model
    theta: np.ndarray
    report: SolveReport
    cs: ConstraintSystem
    metrics: dict = field(default_factory=dict)

    def is_member(self) -> tuple[bool, float]:
        return membership(self.cs, self.theta)


# ---------------------------------------------------------------------- validation


def validate(model: Model, data: Dataset, x1_policy: str = "data") -> Validation:
    """Normalized simulation error ``sum |y~ - y|^2 / sum |y~|^2``.

    ``x1_policy`` is ``"data"`` (first surrogate state, else zero) or ``"zero"``.
    Divergence (root failure or ``|x| > 1e8``) reports ``inf``.
    """
    ms = model.structure
    if data.n_u != ms.n_u or data.n_y != ms.n_y:
        raise ValueError(f"data has n_u={data.n_u}, n_y={data.n_y}; model expects "
                         f"n_u={ms.n_u}, n_y={ms.n_y}")
    if x1_policy not in ("data", "zero"):
        raise ValueError(f"unknown x1 policy {x1_policy!r}")
    x1 = np.zeros(ms.n_x) if x1_policy == "zero" or data.x is None else initial_state(ms, data)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            _, Y = simulate(ms, model.rho, x1, data.u, diverge_at=DIVERGENCE_LIMIT)
    except NoConvergence:
        return Validation(float("inf"), True)
    if not np.all(np.isfinite(Y)):
        return Validation(float("inf"), True)
    denom = float(np.sum(data.y ** 2))
    num = float(np.sum((data.y - Y) ** 2))
    return Validation(num / denom if denom > 0 else (0.0 if num == 0 else float("inf")), False)


# ---------------------------------------------------------------------- EE pieces


def residual_design(ms: ModelStructure, data: Dataset):
    """Equation errors as an affine map ``r(rho) = r0 + A rho``.

    Rows stack ``eps`` ((T-1) n_x, time-major) then ``eta`` (T n_y).
    """
    fe = lifted_features(ms, data)
    T, nx, ny = data.T, ms.n_x, ms.n_y
    eps_A = np.zeros((T - 1, nx, ms.n_rho))
    eta_A = np.zeros((T, ny, ms.n_rho))
    eps0 = np.zeros((T - 1, nx))
    eta0 = -data.y.copy()
    for fn in ("e", "f", "g"):
        idx, fixed, Phi = ms.index[fn], ms.fixed[fn], fe.Phi[fn]
        for (c, k), p in np.ndenumerate(idx):
            if fn == "e":
                col = -Phi[1:, k]
            elif fn == "f":
                col = Phi[:-1, k]
            else:
                col = Phi[:, k]
            tgt_A, tgt_0 = (eta_A, eta0) if fn == "g" else (eps_A, eps0)
            if p >= 0:
                tgt_A[:, c, p] += col
            elif fixed[c, k] != 0.0:
                tgt_0[:, c] += fixed[c, k] * col
    A = np.vstack([eps_A.reshape(-1, ms.n_rho), eta_A.reshape(-1, ms.n_rho)])
    r0 = np.concatenate([eps0.ravel(), eta0.ravel()])
    return A, r0


class QuadraticOracle:
    """``|r0 + A rho|^2`` with its constant Hessian ``2 A'A``."""

    convex = True

    def __init__(self, A: np.ndarray, r0: np.ndarray, n_theta: int):
        self.A, self.r0, self.n_theta = A, r0, n_theta
        self.n_rho = A.shape[1]
        self.hess_block = slice(0, self.n_rho)
        self.H = 2.0 * (A.T @ A)

    def __call__(self, theta, order=2):
        r = self.r0 + self.A @ np.asarray(theta)[: self.n_rho]
        g = None
        if order >= 1:
            g = np.zeros(self.n_theta)
            g[: self.n_rho] = 2.0 * (self.A.T @ r)
        return float(r @ r), g, (self.H if order >= 2 else None)


def assemble_wellposed(ms: ModelStructure, mu_wp: float) -> ConstraintSystem:
    """SOS certificate of ``E(x) + E(x)' - mu_wp I >= 0``; theta = [rho; s2v(Q)]."""
    if mu_wp <= 0:
        raise ValueError("mu_wp must be positive")
    nx = ms.n_x
    n_z = ms.n_vars + nx
    v0 = ms.n_vars
    parts = []
    e_polys = []
    for c in range(nx):
        terms = {}
        for k, m in enumerate(ms.bases["e"]):
            p = ms.index["e"][c, k]
            terms[m] = AffineCoeff.param(int(p)) if p >= 0 else AffineCoeff(constant=ms.fixed["e"][c, k])
        e_polys.append(Polynomial(terms, n_z))
    for a in range(nx):
        for b in range(a, nx):
            entry = poly_partial(e_polys[a], b) + poly_partial(e_polys[b], a)
            if a == b:
                entry = entry - Polynomial.constant(mu_wp, n_z)
            vv = Polynomial.monomial(Monomial([(v0 + a, 1), (v0 + b, 1)]), n_z)
            parts.append(poly_mul(vv, entry.scale(1.0 if a == b else 2.0)))
    p = poly_sum(parts, n_z)
    return sos_system(p, ms.n_rho, 0, range(0, ms.n_vars), range(v0, n_z), mu_wp,
                      meta=dict(kind="wellposed"))


def assemble_stable_subspace(n_x: int, n_u: int, n_y: int, mu: float) -> ConstraintSystem:
    """``[[P - mu I, A], [A', P]] >= 0`` with ``P = P'`` stored as the E block of a
    linear structure (so theta is the linear-model rho)."""
    ms = ModelStructure.linear(n_x, n_u, n_y)
    iE, iF = ms.index["e"], ms.index["f"]
    trip = {}

    def add(i, j, k, w):
        c = AffineCoeff({int(k): w})
        trip[(i, j)] = trip[(i, j)] + c if (i, j) in trip else c

    for a in range(n_x):
        for b in range(a, n_x):
            for blk in (0, n_x):
                add(blk + a, blk + b, iE[a, b], 0.5)
                add(blk + a, blk + b, iE[b, a], 0.5)
        for b in range(n_x):
            add(a, n_x + b, iF[a, b], 1.0)
    s0 = {(a, a): -mu for a in range(n_x)}
    rows = []
    for a in range(n_x):
        for b in range(a + 1, n_x):
            rows.append(({int(iE[a, b]): 1.0, int(iE[b, a]): -1.0}, 0.0))
    layout = ThetaLayout(ms.n_rho, 0, 0)
    return _finish(trip, s0, 2 * n_x, rows, ms.n_rho, layout, mu, meta=dict(kind="stable-subspace"))


# ---------------------------------------------------------------------- fitters


def _metrics(model: Model, data: Dataset, extra=None) -> dict:
    val = validate(model, data)
    out = {"train_nse": val.error, "train_diverged": val.diverged}
    out.update(extra or {})
    return out


def fit_lr(ms: ModelStructure, data: Dataset, mu: float = DEFAULT_MU,
           opts: SolverOptions = SolverOptions(), lti_mode: Optional[bool] = None,
           scale_bound: Optional[float] = None) -> FitResult:
    """Minimize the Lagrangian-relaxation bound over the stable model set.

    Implicit models are invariant to scaling (e, f, P) jointly, so the barrier
    subproblems can be unbounded below; ``trace(P) <= scale_bound`` (default
    ``100 n_x``, ``inf`` disables) removes that direction.
    """
    data.require_states()
    lti = ms.kind == "linear" if lti_mode is None else lti_mode
    if lti:
        cs = assemble_lti(ms.n_x, ms.n_u, ms.n_y, mu)
        if ModelStructure.linear(ms.n_x, ms.n_u, ms.n_y).fingerprint() != ms.fingerprint():
            raise ValueError("exact LMI mode needs ModelStructure.linear")
    else:
        cs = assemble_sos(ms, mu)
    cs = _bounded(cs, trace_bound_row(cs), ms.n_x, scale_bound)
    start = phase_one(cs)
    oracle = LagrangianOracle(ms, data, cs.n_theta)
    report = solve(oracle, cs, start, opts)
    theta = report.theta
    lay = cs.layout
    model = Model(ms, lay.rho(theta).copy(), lay.P(theta), mu,
                  lay.Q(theta) if lay.n_omega else None)
    return FitResult("lr", model, theta, report, cs,
                     _metrics(model, data, {"objective": report.final_objective}))


def _bounded(cs: ConstraintSystem, row: dict, n_x: int, scale_bound: Optional[float]):
    if scale_bound is None:
        scale_bound = DEFAULT_SCALE_BOUND * n_x
    return with_bound(cs, row, scale_bound) if np.isfinite(scale_bound) else cs


def fit_ee(ms: ModelStructure, data: Dataset, mu: float = DEFAULT_MU,
           opts: SolverOptions = SolverOptions(), mu_wp: Optional[float] = None,
           scale_bound: Optional[float] = None) -> FitResult:
    """Minimize equation error subject to an SOS well-posedness constraint on e.

    On exactly fitting data the objective is flat along the joint scaling of
    (e, f), so ``trace(Q) <= scale_bound`` caps the Gram matrix as in fit_lr.
    """
    data.require_states()
    mu_wp = mu if mu_wp is None else mu_wp
    cs = assemble_wellposed(ms, mu_wp)
    lay = cs.layout
    cs = _bounded(cs, {lay.Q_index(i, i): 1.0 for i in range(lay.n_omega)}, ms.n_x, scale_bound)
    A, r0 = residual_design(ms, data)
    oracle = QuadraticOracle(A, r0, cs.n_theta)
    start = phase_one(cs)
    report = solve(oracle, cs, start, opts)
    theta = report.theta
    model = Model(ms, theta[: ms.n_rho].copy(), np.zeros((0, 0)), mu_wp,
                  cs.layout.Q(theta))
    return FitResult("ee", model, theta, report, cs,
                     _metrics(model, data, {"objective": report.final_objective}))


def fit_stable_subspace(data: Dataset, n_x: int, mu: float = DEFAULT_MU,
                        opts: SolverOptions = SolverOptions(),
                        scale_bound: Optional[float] = None) -> FitResult:
    """Equation-error LTI fit with the stability LMI; returns E = P, F = A, K = B.

    ``trace(E) <= scale_bound`` plays the same role as in fit_ee.
    """
    X = data.require_states()
    if X.shape[1] != n_x:
        raise ValueError(f"states have {X.shape[1]} columns, expected n_x={n_x}")
    ms = ModelStructure.linear(n_x, data.n_u, data.n_y)
    cs = assemble_stable_subspace(n_x, data.n_u, data.n_y, mu)
    cs = _bounded(cs, {int(ms.index["e"][a, a]): 1.0 for a in range(n_x)}, n_x, scale_bound)
    A, r0 = residual_design(ms, data)
    oracle = QuadraticOracle(A, r0, cs.n_theta)
    start = phase_one(cs)
    report = solve(oracle, cs, start, opts)
    theta = report.theta
    rho = theta[: ms.n_rho].copy()
    R = ms.coefficients(rho)
    P = 0.5 * (R["e"] + R["e"].T)
    model = Model(ms, rho, P, mu)
    E, F = R["e"], R["f"][:, :n_x]
    return FitResult("stable-subspace", model, theta, report, cs,
                     _metrics(model, data, {"objective": report.final_objective,
                                            "spectral_radius": spectral_radius(np.linalg.solve(E, F))}))


def lti_spectral_radius(model: Model) -> float:
    E, F, *_ = model.linear_matrices()
    return spectral_radius(np.linalg.solve(E, F))


FITTERS = {"lr": fit_lr, "ee": fit_ee}
