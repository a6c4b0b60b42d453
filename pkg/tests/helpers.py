import numpy as np

from lrsysid.datagen import gen_random_lti, make_lti_dataset
from lrsysid.models import Dataset, ModelStructure, linear_rho
from lrsysid.polyalg import Monomial

X = Monomial([(0, 1)])
X3 = Monomial([(0, 3)])
U = Monomial([(1, 1)])


def scalar_cubic_structure() -> ModelStructure:
    """e = r1 x + r2 x^3, f = r3 x + u, g = x (parameters r1, r2, r3)."""
    return ModelStructure.custom(
        1, 1, 1, {"e": [X, X3], "f": [X, U], "g": [X]},
        free={"f": [[True, False]], "g": [[False]]},
        fixed={"f": [[0.0, 1.0]], "g": [[1.0]]},
        kind="scalar-cubic")



def random_stable_linear(n_x, n_u, n_y, rng, rho_bar=0.9):
    """Random implicit LTI model (E, F, K, C, D) with E = I + skew and spectral radius < rho_bar."""
    A = rng.standard_normal((n_x, n_x))
    A *= rng.uniform(0.2, rho_bar) / max(np.abs(np.linalg.eigvals(A)))
    S = rng.standard_normal((n_x, n_x))
    E = np.eye(n_x) + 0.3 * (S - S.T)
    F = E @ A
    K = rng.standard_normal((n_x, n_u))
    C = rng.standard_normal((n_y, n_x))
    D = rng.standard_normal((n_y, n_u))
    return E, F, K, C, D


def linear_model_and_data(seed, n_x=2, T=40, noise=0.1):
    rng = np.random.default_rng(seed)
    E, F, K, C, D = random_stable_linear(n_x, 1, 1, rng)
    ms = ModelStructure.linear(n_x, 1, 1)
    rho = linear_rho(E, F, K, C, D)
    u = rng.standard_normal((T, 1))
    x = rng.standard_normal((T, n_x))
    y = rng.standard_normal((T, 1)) * (1 + noise)
    return ms, rho, Dataset(u, y, x, 1.0)


def lti_data(seed, n_x=2, T=100, snr=np.inf, policy="oracle"):
    sys_, _ = gen_random_lti(n_x, 1, 1, 0.9, seed)
    return sys_, make_lti_dataset(sys_, T, snr, policy, seed)


def box_system(n, A_e=None, b_e=None):
    """S(theta) = diag(1 + theta_i, 1 - theta_i): the open unit box, optional equalities."""
    import scipy.sparse as sp

    from lrsysid.linalg import nullspace_basis
    from lrsysid.stability import ConstraintSystem, ThetaLayout

    n_S = 2 * n
    rows = [k * (n_S + 1) for k in range(n_S)]
    cols = [i for i in range(n) for _ in (0, 1)]
    vals = [1.0, -1.0] * n
    A_s = sp.csr_matrix((vals, (rows, cols)), shape=(n_S * n_S, n))
    s0 = np.eye(n_S).ravel(order="F")
    A_e = np.zeros((0, n)) if A_e is None else np.atleast_2d(np.asarray(A_e, float))
    b_e = np.zeros(0) if b_e is None else np.atleast_1d(np.asarray(b_e, float))
    star = np.linalg.lstsq(A_e, b_e, rcond=None)[0] if A_e.shape[0] else np.zeros(n)
    return ConstraintSystem(A_s, s0, n_S, sp.csr_matrix(A_e), b_e, nullspace_basis(A_e), star,
                            0.0, ThetaLayout(n, 0, 0))


def scaled_identity_system(n_S):
    """S(theta) = theta_0 I."""
    import scipy.sparse as sp

    from lrsysid.stability import ConstraintSystem, ThetaLayout

    rows = [k * (n_S + 1) for k in range(n_S)]
    A_s = sp.csr_matrix((np.ones(n_S), (rows, [0] * n_S)), shape=(n_S * n_S, 1))
    return ConstraintSystem(A_s, np.zeros(n_S * n_S), n_S, sp.csr_matrix((0, 1)), np.zeros(0),
                            np.eye(1), np.ones(1), 0.0, ThetaLayout(1, 0, 0))


# criterion number -> (passed, detail); printed by the terminal summary hook
ACCEPTANCE: dict = {}


def record(n: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {n:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
