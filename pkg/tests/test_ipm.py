import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import box_system, scaled_identity_system
from lrsysid.errors import LineSearchFailed, NotDefinite, NotInDomain
from lrsysid.ipm import (SolverOptions, barrier_eval, barrier_value, chain_to_nu, newton_direction,
                         solve, wolfe_backtrack)
from lrsysid.stability import (assemble_lti, membership, phase_one, random_interior_points,
                               trace_bound_row, with_bound)


class ZeroOracle:
    convex = True

    def __init__(self, n):
        self.n = n

    def __call__(self, theta, order=2):
        return 0.0, np.zeros(self.n), np.zeros((self.n, self.n))


class Quadratic:
    """|theta - c|^2_H / 2."""

    convex = True

    def __init__(self, c, H):
        self.c, self.H = np.asarray(c, float), np.asarray(H, float)

    def __call__(self, theta, order=2):
        r = np.asarray(theta) - self.c
        return 0.5 * float(r @ self.H @ r), self.H @ r, self.H


@pytest.fixture(scope="module")
def lti_cs():
    cs = assemble_lti(2, 1, 1, 1e-3)
    return cs, phase_one(cs)


# ---------------------------------------------------------------- options


def test_default_options():
    o = SolverOptions()
    assert (o.tau0, o.beta, o.delta_f, o.delta_g, o.delta_J, o.maxit) == (1e4, 10, 1e-10, 1e-10, 1e-11, 10_000)
    assert (o.c1, o.c2, o.backtrack, o.max_backtracks) == (1e-4, 0.9, 0.5, 60)


@pytest.mark.parametrize("bad", [dict(tau0=0), dict(beta=1.0), dict(delta_f=0), dict(c1=0.95)])
def test_options_validation(bad):
    with pytest.raises(ValueError):
        SolverOptions(**bad)


# ---------------------------------------------------------------- barrier


def test_barrier_identity():
    cs = box_system(3)
    phi, g, H = barrier_eval(cs, np.zeros(3))
    assert phi == 0.0
    assert np.allclose(g, 0.0)
    # each theta_i moves two unit pivots in opposite directions
    assert np.allclose(H, 2.0 * np.eye(3))


@pytest.mark.parametrize("c", [0.5, 2.0, 7.0])
def test_barrier_scaled_identity(c):
    cs = scaled_identity_system(3)
    phi, g, H = barrier_eval(cs, [c])
    assert phi == pytest.approx(-3 * np.log(c), rel=1e-14)
    assert g[0] == pytest.approx(-3 / c, rel=1e-14)
    assert H[0, 0] == pytest.approx(3 / c**2, rel=1e-14)


def test_barrier_outside_domain():
    cs = box_system(2)
    with pytest.raises(NotInDomain):
        barrier_eval(cs, [1.5, 0.0])
    with pytest.raises(NotInDomain):
        barrier_value(cs, [0.0, -1.0])
    assert issubclass(NotInDomain, NotDefinite)


def test_barrier_matches_finite_differences(lti_cs):
    cs, fp = lti_cs
    rng = np.random.default_rng(0)
    for th in random_interior_points(cs, fp.theta, rng, 20):
        phi, g, H = barrier_eval(cs, th)
        assert phi == pytest.approx(barrier_value(cs, th), rel=1e-12, abs=1e-12)
        d = cs.N_e @ rng.standard_normal(cs.n_nu)
        h = 1e-6 * max(1.0, np.linalg.norm(th)) / np.linalg.norm(d)
        fd = (barrier_value(cs, th + h * d) - barrier_value(cs, th - h * d)) / (2 * h)
        assert abs(fd - g @ d) <= 1e-6 * max(1.0, abs(g @ d))
        hh = 1e-4 * max(1.0, np.linalg.norm(th)) / np.linalg.norm(d)
        gp = barrier_eval(cs, th + hh * d)[1]
        gm = barrier_eval(cs, th - hh * d)[1]
        fdH = (gp - gm) / (2 * hh)
        assert np.linalg.norm(fdH - H @ d) <= 1e-4 * max(1.0, np.linalg.norm(H @ d))


def test_barrier_hessian_is_psd_and_symmetric(lti_cs):
    cs, fp = lti_cs
    H = barrier_eval(cs, fp.theta)[2]
    assert np.array_equal(H, H.T)
    assert np.linalg.eigvalsh(H).min() >= -1e-10 * np.abs(H).max()


# ---------------------------------------------------------------- Newton direction


def test_newton_identity():
    d, delta = newton_direction(np.eye(3), np.array([1.0, 0, 0]))
    assert np.array_equal(d, [-1.0, 0, 0]) and delta == 0.0


def test_newton_zero_hessian_is_regularized_descent():
    g = np.array([1.0, -2.0])
    d, delta = newton_direction(np.zeros((2, 2)), g, 1e-12)
    assert delta >= 1e-12 and d @ g < 0
    assert np.allclose(d, -g / delta)


def test_newton_indefinite_escalates():
    H = np.diag([1.0, -0.5])
    g = np.array([1.0, 1.0])
    d, delta = newton_direction(H, g, 1e-12)
    assert delta > 0.5 and d @ g < 0
    assert np.allclose((H + delta * np.eye(2)) @ d, -g)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_newton_matches_dense_solve(seed, n):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    H = B @ B.T + 0.1 * np.eye(n)
    g = rng.standard_normal(n)
    d, delta = newton_direction(H, g, 1e-12)
    assert delta == 0.0
    want = np.linalg.solve(H, -g)
    assert np.linalg.norm(d - want) <= 1e-10 * max(1.0, np.linalg.norm(want)) * np.linalg.cond(H)
    assert d @ g < 0


# ---------------------------------------------------------------- line search


def quad_phi(f0, g0, curv=1.0, domain=np.inf):
    def phi(a):
        if a >= domain:
            return np.inf, None, None
        return f0 + g0 * a + 0.5 * curv * a * a, g0 + curv * a, None
    return phi


def test_wolfe_accepts_newton_step():
    assert wolfe_backtrack(quad_phi(3.0, -1.0), 3.0, -1.0).alpha == 1.0


def test_wolfe_respects_domain():
    res = wolfe_backtrack(quad_phi(0.0, -1.0, domain=0.3), 0.0, -1.0)
    assert res.alpha <= 0.25


def test_wolfe_domain_error_counts_as_infinite():
    def phi(a):
        if a > 0.1:
            raise NotDefinite("outside")
        return -a, -1.0, None
    assert wolfe_backtrack(phi, 0.0, -1.0).alpha <= 0.1


def test_wolfe_requires_descent():
    with pytest.raises(ValueError):
        wolfe_backtrack(quad_phi(0.0, 1.0), 0.0, 1.0)


def test_wolfe_fails_on_inconsistent_slope():
    # claims descent but the function only increases
    with pytest.raises(LineSearchFailed):
        wolfe_backtrack(lambda a: (a, 1.0, None), 0.0, -1.0, SolverOptions(max_backtracks=20))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 100), st.floats(-100, -1e-3), st.floats(1e-3, 1e3), st.floats(0.05, 5))
def test_wolfe_always_armijo(curv, g0, quart, domain):
    def phi(a):
        if a >= domain:
            return np.inf, None, None
        return g0 * a + 0.5 * curv * a * a + quart * a**4, g0 + curv * a + 4 * quart * a**3, None

    o = SolverOptions()
    res = wolfe_backtrack(phi, 0.0, g0, o)
    assert res.value <= o.c1 * res.alpha * g0
    assert res.alpha < domain


# ---------------------------------------------------------------- chain rule


def test_chain_identity_nullspace():
    cs = box_system(3)
    g = np.array([1.0, 2.0, 3.0])
    H = np.arange(9.0).reshape(3, 3)
    gn, Hn = chain_to_nu(cs, g, H)
    assert np.array_equal(gn, g) and np.array_equal(Hn, H)


def test_chain_kills_row_space():
    cs = box_system(3, A_e=[[1.0, 1.0, 0.0]], b_e=[0.5])
    gn, _ = chain_to_nu(cs, 4.2 * np.array([1.0, 1.0, 0.0]))
    assert np.max(np.abs(gn)) < 1e-14


def test_chain_matches_finite_differences_in_nu(lti_cs):
    cs, fp = lti_cs
    rng = np.random.default_rng(1)
    c = rng.standard_normal(cs.n_theta)
    B = rng.standard_normal((cs.n_theta, cs.n_theta))
    q = Quadratic(c, B @ B.T)
    gn, Hn = chain_to_nu(cs, *q(fp.theta)[1:])
    h = 1e-6
    for j in range(cs.n_nu):
        e = cs.N_e[:, j]
        fd = (q(fp.theta + h * e)[0] - q(fp.theta - h * e)[0]) / (2 * h)
        assert abs(fd - gn[j]) <= 1e-6 * max(1.0, abs(gn[j]))
    assert np.allclose(Hn, cs.N_e.T @ (B @ B.T) @ cs.N_e)


# ---------------------------------------------------------------- solve


def test_pure_barrier_reaches_analytic_center():
    cs = box_system(2, A_e=[[1.0, 1.0]], b_e=[0.5])
    rep = solve(ZeroOracle(2), cs, cs.theta_star + np.array([0.3, -0.3]))
    assert np.allclose(rep.theta, [0.25, 0.25], atol=1e-8)
    g_nu = chain_to_nu(cs, barrier_eval(cs, rep.theta)[1])[0]
    assert np.max(np.abs(g_nu)) <= 1e-6
    assert rep.termination == "converged"


def test_pure_barrier_on_bounded_lti_set(lti_cs):
    cs, fp = lti_cs
    cs_b = with_bound(cs, trace_bound_row(cs), 1e3)
    cs_b = with_bound(cs_b, {i: 1.0 for i in range(cs.layout.n_rho)}, 1e3)
    cs_b = with_bound(cs_b, {i: -1.0 for i in range(cs.layout.n_rho)}, 1e3)
    rep = solve(ZeroOracle(cs.n_theta), cs_b, fp.theta)
    g_nu = chain_to_nu(cs_b, barrier_eval(cs_b, rep.theta)[1])[0]
    assert np.max(np.abs(g_nu)) <= 1e-6 * max(1.0, np.abs(barrier_eval(cs_b, rep.theta)[1]).max())


def test_quadratic_minimizer_deep_inside():
    cs = box_system(3, A_e=[[1.0, 0.0, 1.0]], b_e=[0.2])
    c = np.array([0.1, -0.2, 0.1])  # satisfies the equality
    q = Quadratic(c, np.diag([2.0, 1.0, 3.0]))
    rep = solve(q, cs, cs.theta_star)
    assert np.max(np.abs(rep.theta - c)) <= 1e-6
    assert cs.equality_residual(rep.theta) < 1e-12


def test_tau_schedule_and_feasible_iterates(lti_cs):
    cs, fp = lti_cs
    rng = np.random.default_rng(2)
    c = 5 * rng.standard_normal(cs.n_theta)
    opts = SolverOptions(check_feasibility=True)
    rep = solve(Quadratic(c, np.eye(cs.n_theta)), cs, fp.theta, opts)
    assert rep.taus == [1e4 / 10.0**k for k in range(len(rep.taus))]
    assert membership(cs, rep.theta)[0] and rep.margin > 0
    assert len(rep.newton_steps) == len(rep.objective_trace) == len(rep.taus)
    assert rep.total_newton_steps == len(rep.step_wall_times_us)


def test_inner_descent_is_monotone(lti_cs):
    cs, fp = lti_cs
    seen = []

    class Recording(Quadratic):
        def __call__(self, theta, order=2):
            out = super().__call__(theta, order)
            if order == 2:
                seen.append(out[0] + 10.0 * barrier_value(cs, theta))
            return out

    c = np.linspace(-1, 1, cs.n_theta)
    solve(Recording(c, np.eye(cs.n_theta)), cs, fp.theta, SolverOptions(tau0=10.0, beta=1e6, tau_min=1.0))
    assert len(seen) >= 2
    assert all(b < a for a, b in zip(seen, seen[1:]))


def test_solve_is_deterministic(lti_cs):
    cs, fp = lti_cs
    c = np.linspace(-2, 2, cs.n_theta)
    q = Quadratic(c, np.eye(cs.n_theta))
    a = solve(q, cs, fp.theta)
    b = solve(q, cs, fp.theta)
    assert np.array_equal(a.theta, b.theta)
    assert a.objective_trace == b.objective_trace and a.newton_steps == b.newton_steps


def test_report_serializes():
    rep = solve(ZeroOracle(1), box_system(1), np.zeros(1))
    d = json.loads(json.dumps(rep.to_dict()))
    for key in ("theta", "objective_trace", "newton_steps", "step_wall_times_us", "termination",
                "options_echo"):
        assert key in d
    assert d["options_echo"]["tau0"] == 1e4


def test_tau_min_flagged():
    cs = box_system(1)
    rep = solve(Quadratic([0.5], [[1.0]]), cs, np.zeros(1),
                SolverOptions(tau0=1.0, tau_min=0.5, delta_J=1e-300))
    assert rep.tau_min_reached and rep.termination == "tau_min"
