import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrsysid.errors import Infeasible
from lrsysid.linalg import nullspace_basis
from lrsysid.models import ModelStructure, spectral_radius
from lrsysid.polyalg import AffineCoeff, Monomial, Polynomial, poly_eval_many
from lrsysid.stability import (ThetaLayout, assemble_lti, assemble_sos, build_contraction_poly,
                               contraction_matrix, dump_constraint_system, gram_poly, max_step,
                               membership, phase_one, random_interior_points, s2v, select_basis,
                               sos_system, v2s)

MU = 1e-3


def mono(*pairs):
    return Monomial(list(pairs))


def sample_equality_points(cs, rng, n=5):
    return [cs.theta_star + cs.N_e @ rng.standard_normal(cs.n_nu) for _ in range(n)]


def test_s2v_round_trip():
    M = np.arange(9.0).reshape(3, 3)
    M = M + M.T
    assert np.array_equal(v2s(s2v(M), 3), M)
    assert list(s2v(M)) == [M[0, 0], M[0, 1], M[1, 1], M[0, 2], M[1, 2], M[2, 2]]


# ---------------------------------------------------------------- contraction polynomial


def test_cubic_contraction_polynomial(cubic_ms):
    p = build_contraction_poly(cubic_ms, MU)
    # z = (x, u, v1, v2, v3); theta = (r1, r2, r3, P)
    want = Polynomial({
        mono((2, 2)): AffineCoeff({0: 2.0, 3: -1.0}, -MU),
        mono((0, 2), (2, 2)): AffineCoeff({1: 6.0}),
        mono((2, 1), (3, 1)): AffineCoeff({2: 2.0}),
        mono((3, 2)): AffineCoeff({3: 1.0}),
        mono((2, 1), (4, 1)): AffineCoeff(constant=2.0),
        mono((4, 2)): AffineCoeff(constant=1.0),
    }, 5)
    assert p == want


def test_linear_contraction_polynomial_is_constant_in_xu():
    ms = ModelStructure.linear(2, 1, 1)
    p = build_contraction_poly(ms, MU)
    assert all(m.degree_in(range(ms.n_vars)) == 0 for m in p.support())


def test_output_row_terms(cubic_ms):
    p = build_contraction_poly(cubic_ms, MU)
    with_v3 = [m for m in p.support() if m.exponent(4) and m != mono((4, 2))]
    assert with_v3 == [mono((2, 1), (4, 1))]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_polynomial_matches_contraction_matrix(seed):
    rng = np.random.default_rng(seed)
    ms = ModelStructure.polynomial(2, 1, 1, 3, 2, 1, 1, 1)
    lay = ThetaLayout(ms.n_rho, ms.n_x, 0)
    p = build_contraction_poly(ms, MU, lay)
    theta = rng.standard_normal(lay.n_theta)
    z = rng.uniform(-1, 1, (50, p.n_vars))
    vals = poly_eval_many(p, theta, z)
    for zi, val in zip(z, vals):
        M = contraction_matrix(ms, theta[:ms.n_rho], lay.P(theta), MU, zi[:2], zi[2:3])
        v = zi[3:]
        assert abs(v @ M @ v - val) <= 1e-10 * (1 + abs(val))


# ---------------------------------------------------------------- basis selection


def test_cubic_basis(cubic_ms):
    p = build_contraction_poly(cubic_ms, MU)
    omega = select_basis(p, range(0, 2), range(2, 5))
    assert omega == [mono((0, 1), (2, 1)), mono((2, 1)), mono((3, 1)), mono((4, 1))]


def test_linear_basis():
    ms = ModelStructure.linear(1, 1, 1)
    p = build_contraction_poly(ms, MU)
    assert select_basis(p, range(0, 2), range(2, 5)) == [mono((2, 1)), mono((3, 1)), mono((4, 1))]


@pytest.mark.parametrize("degs", [(1, 1, 1), (3, 1, 1), (3, 3, 1), (2, 3, 2), (3, 2, 1)])
def test_basis_represents_every_term(degs):
    ms = ModelStructure.polynomial(2, 1, 1, degs[0], degs[1], 1, degs[2], 1)
    lay = ThetaLayout(ms.n_rho, ms.n_x, 0)
    p = build_contraction_poly(ms, MU, lay)
    xu, v = range(ms.n_vars), range(ms.n_vars, p.n_vars)
    full = select_basis(p, xu, v, prune=False)
    assert all(w.degree_in(v) == 1 for w in full)
    assert set(p.support()) <= {a * b for a in full for b in full}
    # after pruning, any term left without a pair is pinned to zero by the equalities
    cs = sos_system(p, ms.n_rho, ms.n_x, xu, v, MU)
    pairs = {a * b for a in cs.omega for b in cs.omega}
    orphans = [m for m in p.support() if m not in pairs]
    for th in sample_equality_points(cs, np.random.default_rng(0), 3):
        for m in orphans:
            assert abs(p.coeff(m)(th[:lay.n_theta])) < 1e-9


# ---------------------------------------------------------------- SOS assembly


def test_cubic_gram_constraints(cubic_ms):
    cs = assemble_sos(cubic_ms, MU)
    lay = cs.layout
    rng = np.random.default_rng(0)
    for th in sample_equality_points(cs, rng):
        r1, r2, r3 = th[:3]
        P = lay.P(th)[0, 0]
        Q = lay.Q(th)
        want = np.zeros((4, 4))
        want[0, 0] = 6 * r2
        want[1, 1] = 2 * r1 - P - MU
        want[2, 2] = P
        want[3, 3] = 1.0
        want[1, 2] = want[2, 1] = r3
        want[1, 3] = want[3, 1] = 1.0
        assert np.allclose(Q, want, atol=1e-10)


def test_cubic_xsquared_row(cubic_ms):
    cs = assemble_sos(cubic_ms, MU)
    A = cs.A_e.toarray()
    lay = cs.layout
    target = np.zeros(cs.n_theta)
    target[1] = -6.0
    target[lay.Q_index(0, 0)] = 1.0
    hits = [i for i in range(A.shape[0]) if np.allclose(A[i], target) or np.allclose(A[i], -target)]
    assert len(hits) == 1 and cs.b_e[hits[0]] == 0.0


def test_row_count_is_union_of_supports(cubic_ms):
    cs = assemble_sos(cubic_ms, MU)
    p = build_contraction_poly(cubic_ms, MU)
    gram = gram_poly(cs.omega, cs.layout, p.n_vars)
    assert cs.A_e.shape[0] == len(set(gram.support()) | set(p.support()))


def assembled_systems():
    yield assemble_lti(2, 1, 1, MU)
    yield assemble_sos(ModelStructure.linear(2, 1, 1), MU)
    yield assemble_sos(ModelStructure.polynomial(1, 1, 1, 3, 3, 1, 1, 1), MU)
    yield assemble_sos(ModelStructure.polynomial(2, 1, 1, 3, 3, 1, 1, 1), MU)


@pytest.mark.parametrize("cs", list(assembled_systems()), ids=lambda c: c.meta.get("kind"))
def test_nullspace_identities(cs):
    A = cs.A_e.toarray()
    N = cs.N_e
    if A.shape[0]:
        assert np.max(np.abs(A @ cs.theta_star - cs.b_e)) <= 1e-10
        assert np.max(np.abs(A @ N)) <= 1e-12 * max(1.0, np.abs(A).max())
    assert np.allclose(N.T @ N, np.eye(N.shape[1]), atol=1e-12)
    th = np.random.default_rng(1).standard_normal(cs.n_theta)
    S = cs.S(th)
    assert np.array_equal(S, S.T)


@pytest.mark.parametrize("degs", [(3, 3, 1), (3, 1, 1), (2, 2, 2)])
def test_sos_soundness_sampling(degs):
    ms = ModelStructure.polynomial(1, 1, 1, *degs[:2], 1, degs[2], 1)
    cs = assemble_sos(ms, MU)
    p = build_contraction_poly(ms, MU, cs.layout)
    rng = np.random.default_rng(2)
    fp = phase_one(cs)
    for th in [fp.theta] + random_interior_points(cs, fp.theta, rng, 4):
        assert membership(cs, th)[0]
        z = rng.uniform(-2, 2, (10_000, p.n_vars))
        vals = poly_eval_many(p, th, z)
        tol = 1e-9 * (1 + np.sum(z ** 2, axis=1) ** 2 * np.linalg.norm(th))
        assert np.all(vals >= -tol)


def _embed(theta_small, small, big):
    """Map a pruned-basis theta into the unpruned layout (dropped rows/cols zero)."""
    ls, lb = small.layout, big.layout
    out = np.zeros(big.n_theta)
    out[:ls.Q_offset] = theta_small[:ls.Q_offset]
    pos = [big.omega.index(w) for w in small.omega]
    Q = ls.Q(theta_small)
    for j in range(len(pos)):
        for i in range(j + 1):
            a, b = sorted((pos[i], pos[j]))
            out[lb.Q_index(a, b)] = Q[i, j]
    return out


@pytest.mark.parametrize("seed", range(20))
def test_pruning_is_lossless(seed):
    rng = np.random.default_rng(seed)
    n_x = int(rng.integers(1, 3))
    d_e, d_f, d_g = (int(v) for v in rng.integers(1, 4, 3))
    ms = ModelStructure.polynomial(n_x, 1, 1, d_e, d_f, 1, d_g, 1)
    p = build_contraction_poly(ms, MU, ThetaLayout(ms.n_rho, n_x, 0))
    xu, v = range(ms.n_vars), range(ms.n_vars, p.n_vars)
    small = sos_system(p, ms.n_rho, n_x, xu, v, MU)
    big = sos_system(p, ms.n_rho, n_x, xu, v, MU, prune=False)
    dropped = [k for k, w in enumerate(big.omega) if w not in small.omega]
    Ab = big.A_e.toarray()
    # every dropped diagonal entry is pinned to zero by the unpruned equalities
    for k in dropped:
        e = np.zeros(big.n_theta)
        e[big.layout.Q_index(k, k)] = 1.0
        coef, *_ = np.linalg.lstsq(Ab.T, e, rcond=None)
        assert np.allclose(Ab.T @ coef, e, atol=1e-9) and abs(coef @ big.b_e) < 1e-12
    # with the dropped rows/cols zero (as PSD forces), both affine sets coincide
    zero_idx = sorted({big.layout.Q_index(min(k, j), max(k, j))
                       for k in dropped for j in range(len(big.omega))})
    keep = np.setdiff1d(np.arange(big.n_theta), zero_idx)
    assert np.max(np.abs(Ab @ _embed(small.theta_star, small, big) - big.b_e)) <= 1e-9
    for th in sample_equality_points(small, rng, 3):
        assert np.max(np.abs(Ab @ _embed(th, small, big) - big.b_e)) <= 1e-9
    restricted_dim = nullspace_basis(Ab[:, keep]).shape[1]
    assert restricted_dim == small.n_nu


# ---------------------------------------------------------------- exact LTI LMI


def test_lti_block_pattern():
    cs = assemble_lti(1, 1, 1, MU)
    E, F, K, C, D, P = 1.3, 0.4, 0.7, -0.2, 0.5, 0.9
    S = cs.S(np.array([E, F, K, C, D, P]))
    assert np.allclose(S, [[2 * E - P - MU, F, C], [F, P, 0], [C, 0, 1]])


def test_lti_strictly_feasible_example():
    cs = assemble_lti(1, 1, 1, 0.1)
    S = cs.S(np.array([1.5, 0.0, 0.0, 0.0, 0.0, 1.0]))
    lam = np.linalg.eigvalsh(S)
    assert lam.min() > 0 and membership(cs, np.array([1.5, 0, 0, 0, 0, 1.0]))[0]


def test_lti_zero_theta_is_indefinite():
    cs = assemble_lti(2, 1, 1, MU)
    S = cs.S(np.zeros(cs.n_theta))
    assert np.array_equal(S, v2s(s2v(S), cs.n_S))
    assert S[0, 0] == -MU and S[-1, -1] == 1.0
    assert not membership(cs, np.zeros(cs.n_theta))[0]


@pytest.mark.parametrize("dims", [(1, 1, 1), (2, 1, 1), (3, 2, 2)])
def test_phase_one_lti(dims):
    cs = assemble_lti(*dims, MU)
    fp = phase_one(cs)
    ok, margin = membership(cs, fp.theta)
    assert ok and margin >= 1e-6 and np.linalg.eigvalsh(cs.S(fp.theta)).min() == pytest.approx(margin)


def test_phase_one_cubic(cubic_ms):
    cs = assemble_sos(cubic_ms, MU)
    fp = phase_one(cs)
    assert np.linalg.eigvalsh(cs.layout.Q(fp.theta)).min() > 0
    assert cs.equality_residual(fp.theta) <= 1e-8


def test_phase_one_detects_infeasibility():
    p = Polynomial.monomial(Monomial([(0, 2)]), 1, -1.0)  # -v^2: Gram entry pinned to -1
    cs = sos_system(p, 0, 0, range(0, 0), range(0, 1), MU)
    with pytest.raises(Infeasible):
        phase_one(cs)


def test_membership_of_particular_solution_fails():
    cs = assemble_sos(ModelStructure.polynomial(2, 1, 1, 3, 3, 1, 1, 1), MU)
    ok, margin = membership(cs, cs.theta_star)
    assert cs.equality_residual(cs.theta_star) <= 1e-10 and not ok and margin < 0


def test_membership_margin_vanishes_at_boundary():
    cs = assemble_lti(2, 1, 1, MU)
    fp = phase_one(cs)
    d = cs.N_e @ np.random.default_rng(3).standard_normal(cs.n_nu)
    a = max_step(cs, fp.theta, d)
    assert np.isfinite(a)
    for frac, tol in ((0.999, 1e-2), (1 - 1e-9, 1e-7)):
        ok, margin = membership(cs, fp.theta + frac * a * d)
        assert ok and 0 <= margin < tol * (1 + fp.margin)


def test_lti_members_are_stable():
    n_x = 3
    cs = assemble_lti(n_x, 1, 1, MU)
    ms = ModelStructure.linear(n_x, 1, 1)
    fp = phase_one(cs)
    rng = np.random.default_rng(4)
    pts = random_interior_points(cs, fp.theta, rng, 50)
    for th in pts:
        assert membership(cs, th)[0]
        R = ms.coefficients(th[:ms.n_rho])
        assert spectral_radius(np.linalg.solve(R["e"], R["f"][:, :n_x])) < 1


def test_dump_round_trips_matrices(cubic_ms):
    cs = assemble_sos(cubic_ms, MU)
    d = dump_constraint_system(cs)
    A = np.zeros(cs.A_e.shape)
    for r, c, v in d["A_e"]:
        A[r, c] = v
    assert np.array_equal(A, cs.A_e.toarray()) and len(d["omega"]) == 4
