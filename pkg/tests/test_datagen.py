import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrsysid.datagen import (InputSpec, MsdParams, central_diff_states, empirical_snr_db,
                             gen_random_lti, integrate_msd, make_lti_dataset, msd_energy,
                             oracle_states, output_diff_states, simulate_msd, spring_force)
from lrsysid.errors import OutOfRange
from lrsysid.models import ModelStructure, linear_rho, residuals


# ---------------------------------------------------------------- spring


def test_spring_values():
    assert spring_force(0.0, 2.0) == 0.0
    assert spring_force(0.625, 2.0) == pytest.approx(2.0, rel=1e-14)


def test_spring_antisymmetric():
    s = np.linspace(-1.2, 1.2, 100)
    assert np.array_equal(spring_force(-s, 1.5), -spring_force(s, 1.5))


@pytest.mark.parametrize("s", [1.25, -1.3])
def test_spring_out_of_range(s):
    with pytest.raises(OutOfRange):
        spring_force(s, 1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        MsdParams(m1=0.0)
    with pytest.raises(ValueError):
        MsdParams(force_mass=3)
    assert MsdParams().T == 1000


# ---------------------------------------------------------------- MSD simulation


def test_zero_input_stays_at_rest():
    run = simulate_msd(inp=InputSpec(amplitude=(0.0, 0.0)), seed=3, T=200)
    assert np.array_equal(run.clean, np.zeros((200, 4)))
    assert np.std(run.dataset.y) == pytest.approx(1e-2, rel=0.2)


def test_default_snr_in_band():
    for seed in range(5):
        run = simulate_msd(seed=seed)
        assert 28.0 <= run.snr_db <= 40.0


def test_rk4_step_halving():
    p = MsdParams()
    amp, freq, phase = InputSpec().draw(np.random.default_rng(0))

    def f(t):
        return float(np.sum(amp * np.sin(2 * np.pi * freq * t + phase)))

    a = integrate_msd(p, f, np.zeros(4), 300)
    b = integrate_msd(p, f, np.zeros(4), 300, step=0.005)
    assert np.max(np.abs(a - b)) <= 1e-6 * np.max(np.abs(b))


def test_msd_is_deterministic():
    a, b = simulate_msd(seed=11, T=300), simulate_msd(seed=11, T=300)
    for k in ("u", "y", "x"):
        assert np.array_equal(getattr(a.dataset, k), getattr(b.dataset, k))


def test_msd_dataset_layout():
    run = simulate_msd(seed=1, T=50)
    d = run.dataset
    assert d.u.shape == (50, 1) and d.y.shape == (50, 1) and d.x.shape == (50, 4)
    assert np.array_equal(d.y[:, 0], d.x[:, 1])
    assert d.meta["generator"] == "msd" and d.sample_time == 0.1


@pytest.mark.parametrize("seed", range(10))
def test_free_response_energy_decreases(seed):
    rng = np.random.default_rng(seed)
    p = MsdParams()
    z0 = np.concatenate([rng.uniform(-0.4, 0.4, 2), rng.uniform(-0.5, 0.5, 2)])
    Z = integrate_msd(p, lambda t: 0.0, z0, 400)
    e = msd_energy(p, Z)
    assert np.all(np.diff(e) <= 1e-12 * e[0])
    assert e[-1] < e[0]


def test_oracle_states_regenerate_clean_trajectory():
    run = simulate_msd(seed=4, T=120)
    assert np.array_equal(oracle_states(run.dataset), run.clean)


# ---------------------------------------------------------------- central differences


def test_constant_gives_zero_velocity():
    x = central_diff_states(np.full(10, 0.3), np.full(10, -0.2), 0.1)
    assert np.all(x[:, 2:] == 0)


def test_ramp_gives_unit_velocity():
    t = np.arange(20) * 0.1
    x = central_diff_states(t, 2 * t, 0.1)
    assert np.allclose(x[:, 2], 1.0) and np.allclose(x[:, 3], 2.0)
    assert np.allclose(central_diff_states(t, t, 0.1, paper_exact_divisor=True)[:, 2], 2.0)


def test_sine_velocity_second_order():
    errs = []
    for Ts in (0.1, 0.05):
        t = np.arange(int(20 / Ts)) * Ts
        w = 2 * np.pi * 0.1
        x = central_diff_states(np.sin(w * t), np.zeros_like(t), Ts)
        errs.append(np.max(np.abs(x[1:-1, 2] - w * np.cos(w * t[1:-1]))))
    assert errs[0] <= w**3 * 0.1**2 / 6 * 1.01
    assert errs[1] / errs[0] == pytest.approx(0.25, rel=0.05)


def test_central_diff_too_short():
    with pytest.raises(ValueError):
        central_diff_states([0.0, 1.0], [0.0, 1.0], 0.1)


def test_output_diff_states():
    run = simulate_msd(seed=2, T=40)
    X = output_diff_states(run.dataset)
    y = run.dataset.y[:, 0]
    assert np.array_equal(X[:, 0], y)
    assert np.allclose(X[1:-1, 1], (y[2:] - y[:-2]) / 0.2)


# ---------------------------------------------------------------- random LTI


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.floats(0.35, 0.99))
def test_random_lti_radius_bound(seed, n, rho_bar):
    sys_, ok = gen_random_lti(n, 1, 1, rho_bar, seed)
    assert ok and sys_.spectral_radius() < rho_bar + 1e-12


def test_random_lti_deterministic_and_impulse_energy_finite():
    a, _ = gen_random_lti(4, 2, 1, 0.95, 9)
    b, _ = gen_random_lti(4, 2, 1, 0.95, 9)
    for k in "ABCD":
        assert np.array_equal(getattr(a, k), getattr(b, k))
    terms = []
    M = a.B.copy()
    for _ in range(400):
        terms.append(np.sum((a.C @ M) ** 2))
        M = a.A @ M
    tail = np.array(terms[-50:])
    assert np.sum(terms) < np.inf and tail.max() < 1e-10 * max(terms)


def test_random_lti_rejects_bad_radius():
    with pytest.raises(ValueError):
        gen_random_lti(2, 1, 1, 1.0, 0)


def test_lti_noiseless_and_exact_residuals():
    sys_, _ = gen_random_lti(3, 1, 2, 0.9, 5)
    d = make_lti_dataset(sys_, 200, np.inf, "oracle", 5)
    assert np.isinf(d.meta["empirical_snr_db"])
    ms = ModelStructure.linear(3, 1, 2)
    r = residuals(ms, linear_rho(np.eye(3), sys_.A, sys_.B, sys_.C, sys_.D), d)
    assert np.max(np.abs(r.eps)) < 1e-12 and np.max(np.abs(r.eta)) < 1e-12


@pytest.mark.parametrize("snr", [17.0, 20.0, 30.0])
def test_lti_empirical_snr(snr):
    sys_, _ = gen_random_lti(4, 1, 1, 0.95, 1)
    d = make_lti_dataset(sys_, 4000, snr, "oracle", 1)
    assert abs(d.meta["empirical_snr_db"] - snr) <= 1.0


def test_lti_noisy_oracle_states_and_determinism():
    sys_, _ = gen_random_lti(2, 1, 1, 0.9, 6)
    clean = make_lti_dataset(sys_, 3000, np.inf, "oracle", 6)
    noisy = make_lti_dataset(sys_, 3000, 20.0, "noisy-oracle", 6)
    again = make_lti_dataset(sys_, 3000, 20.0, "noisy-oracle", 6)
    assert np.array_equal(noisy.x, again.x) and np.array_equal(noisy.y, again.y)
    assert empirical_snr_db(clean.x, noisy.x) == pytest.approx(20.0, abs=1.0)
    assert np.array_equal(oracle_states(noisy), clean.x)


def test_lti_bad_policy():
    sys_, _ = gen_random_lti(2, 1, 1, 0.9, 0)
    with pytest.raises(ValueError):
        make_lti_dataset(sys_, 10, np.inf, "subspace", 0)
