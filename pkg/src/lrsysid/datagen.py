"""Synthetic datasets: a two-mass chain with hardening springs and random stable LTI systems."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import OutOfRange
from .models import Dataset

MAX_ATTEMPTS = 25


# ---------------------------------------------------------------------- MSD


@dataclass(frozen=True)
class MsdParams:
    m1: float = 0.5
    m2: float = 0.1
    c1: float = 0.01
    c2: float = 0.1
    k1: float = 2.0
    k2: float = 1.0
    limit: float = 1.25
    sample_time: float = 0.1
    duration: float = 100.0
    noise_var: float = 1e-4
    rk4_step: float = 0.01
    force_mass: int = 1  # which mass the input force acts on

    def __post_init__(self):
        if self.force_mass not in (1, 2):
            raise ValueError("force_mass must be 1 or 2")
        if min(self.m1, self.m2) <= 0 or self.sample_time <= 0 or self.rk4_step <= 0:
            raise ValueError("masses, sample time and integration step must be positive")
        if min(self.c1, self.c2, self.k1, self.k2, self.noise_var) < 0:
            raise ValueError("damping, stiffness and noise variance must be nonnegative")

    @property
    def T(self) -> int:
        return int(round(self.duration / self.sample_time))


@dataclass(frozen=True)
class InputSpec:
    n_sines: int = 20
    amplitude: tuple = (0.08, 0.12)  # N, per sinusoid
    frequency: tuple = (0.0, 0.6)  # Hz

    def draw(self, rng: np.random.Generator):
        amp = rng.uniform(*self.amplitude, self.n_sines)
        freq = rng.uniform(*self.frequency, self.n_sines)
        phase = rng.uniform(0.0, 2.0 * np.pi, self.n_sines)
        return amp, freq, phase


def spring_force(s, k):
    """Hardening spring ``k tan(pi s / 2.5)``; defined for ``|s| < 1.25``."""
    s = np.asarray(s, dtype=float)
    if np.any(np.abs(s) >= 1.25):
        raise OutOfRange("spring displacement outside (-1.25, 1.25)")
    out = k * np.tan(np.pi * s / 2.5)
    return float(out) if out.ndim == 0 else out


def spring_energy(s, k):
    """Potential energy of :func:`spring_force` relative to ``s = 0``."""
    return -k * 2.5 / np.pi * np.log(np.cos(np.pi * np.asarray(s, float) / 2.5))


def msd_energy(p: MsdParams, state: np.ndarray) -> np.ndarray:
    s1, s2, v1, v2 = np.atleast_2d(state).T
    return (0.5 * p.m1 * v1**2 + 0.5 * p.m2 * v2**2
            + spring_energy(s1, p.k1) + spring_energy(s2 - s1, p.k2))


def _msd_rhs(p: MsdParams, z: np.ndarray, force: float) -> np.ndarray:
    s1, s2, v1, v2 = z
    d = s2 - s1
    if abs(s1) >= p.limit or abs(d) >= p.limit:
        raise OutOfRange("spring displacement left (-1.25, 1.25)")
    f1 = p.k1 * np.tan(np.pi * s1 / 2.5)
    f2 = p.k2 * np.tan(np.pi * d / 2.5)
    f_1, f_2 = (force, 0.0) if p.force_mass == 1 else (0.0, force)
    a1 = (-f1 - p.c1 * v1 + f2 + p.c2 * (v2 - v1) + f_1) / p.m1
    a2 = (-f2 - p.c2 * (v2 - v1) + f_2) / p.m2
    return np.array([v1, v2, a1, a2])


def integrate_msd(p: MsdParams, force_fn, z0, T: int, step: Optional[float] = None) -> np.ndarray:
    """Fixed-step RK4; returns the state (T, 4) at multiples of the sample time."""
    h = p.rk4_step if step is None else step
    sub = int(round(p.sample_time / h))
    if sub < 1 or abs(sub * h - p.sample_time) > 1e-12:
        raise ValueError("sample time must be an integer multiple of the RK4 step")
    Z = np.zeros((T, 4))
    z = np.array(z0, dtype=float)
    Z[0] = z
    for t in range(1, T):
        for j in range(sub):
            tc = (t - 1) * p.sample_time + j * h
            k1 = _msd_rhs(p, z, force_fn(tc))
            k2 = _msd_rhs(p, z + 0.5 * h * k1, force_fn(tc + 0.5 * h))
            k3 = _msd_rhs(p, z + 0.5 * h * k2, force_fn(tc + 0.5 * h))
            k4 = _msd_rhs(p, z + h * k3, force_fn(tc + h))
            z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise OutOfRange(f"non-finite state at sample {t}")
        Z[t] = z
    return Z


def sine_force(amp, freq, phase):
    def f(t):
        return float(np.sum(amp * np.sin(2.0 * np.pi * freq * t + phase)))
    return f


def central_diff_states(s1, s2, sample_time: float, paper_exact_divisor: bool = False) -> np.ndarray:
    """Surrogate states ``[s1, s2, s1', s2']`` from sampled displacements.

    Interior velocities are central differences over ``2 T_s`` (or ``T_s`` with
    ``paper_exact_divisor``); endpoints use one-sided differences on the same scale.
    """
    s1 = np.asarray(s1, float).ravel()
    s2 = np.asarray(s2, float).ravel()
    if s1.size < 3 or s2.size != s1.size:
        raise ValueError("need two equal-length sequences with at least 3 samples")
    div = sample_time if paper_exact_divisor else 2.0 * sample_time
    out = np.zeros((s1.size, 4))
    out[:, 0], out[:, 1] = s1, s2
    for col, s in ((2, s1), (3, s2)):
        v = np.empty_like(s)
        v[1:-1] = (s[2:] - s[:-2]) / div
        v[0] = 2.0 * (s[1] - s[0]) / div
        v[-1] = 2.0 * (s[-1] - s[-2]) / div
        out[:, col] = v
    return out


@dataclass
class MsdRun:
    dataset: Dataset
    clean: np.ndarray  # (T, 4) true state
    snr_db: float
    attempts: int


def simulate_msd(p: MsdParams = MsdParams(), inp: InputSpec = InputSpec(), seed: int = 0,
                 z0=(0.0, 0.0, 0.0, 0.0), T: Optional[int] = None,
                 paper_exact_divisor: bool = False, step: Optional[float] = None) -> MsdRun:
    """Simulate the chain under a random multisine force applied to mass 1.

    Output is the noisy position of mass 2; surrogate states come from central
    differences of both noisy positions. Runs leaving the spring range are
    redrawn with a new deterministic sub-seed.
    """
    T = p.T if T is None else int(T)
    if T < 3:
        raise ValueError("need T >= 3")
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        amp, freq, phase = inp.draw(rng)
        force = sine_force(amp, freq, phase)
        try:
            Z = integrate_msd(p, force, z0, T, step)
        except OutOfRange:
            continue
        noise = rng.normal(0.0, np.sqrt(p.noise_var), size=(T, 2))
        s_noisy = Z[:, :2] + noise
        u = np.array([force(t * p.sample_time) for t in range(T)])
        x = central_diff_states(s_noisy[:, 0], s_noisy[:, 1], p.sample_time, paper_exact_divisor)
        noise_pow = float(np.mean(noise[:, 1] ** 2))
        sig_pow = float(np.mean(Z[:, 1] ** 2))
        snr = 10 * np.log10(sig_pow / noise_pow) if noise_pow > 0 and sig_pow > 0 else np.inf
        meta = dict(generator="msd", seed=seed, attempt=attempt, params=asdict(p),
                    input=asdict(inp), snr_db=snr, paper_exact_divisor=paper_exact_divisor)
        ds = Dataset(u[:, None], s_noisy[:, 1:2], x, p.sample_time, meta)
        return MsdRun(ds, Z, snr, attempt + 1)
    raise OutOfRange(f"no admissible trajectory in {MAX_ATTEMPTS} attempts (seed {seed})")


# ---------------------------------------------------------------------- LTI


@dataclass(frozen=True)
class LtiSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def simulate(self, u: np.ndarray, x1=None):
        T = u.shape[0]
        X = np.zeros((T, self.n_x))
        if x1 is not None:
            X[0] = x1
        for t in range(T - 1):
            X[t + 1] = self.A @ X[t] + self.B @ u[t]
        return X, X @ self.C.T + u @ self.D.T


def gen_random_lti(n_x: int, n_u: int, n_y: int, rho_bar: float = 0.95, seed: int = 0):
    """Random stable system; returns ``(system, impulse_stable)``."""
    if not 0 < rho_bar < 1:
        raise ValueError("need 0 < rho_bar < 1")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n_x, n_x))
    target = rng.uniform(min(0.3, rho_bar), rho_bar)
    A *= target / np.max(np.abs(np.linalg.eigvals(A)))
    s = 1.0 / np.sqrt(n_x)
    B = s * rng.standard_normal((n_x, n_u))
    C = s * rng.standard_normal((n_y, n_x))
    D = s * rng.standard_normal((n_y, n_u))
    sys = LtiSystem(A, B, C, D)
    return sys, bool(sys.spectral_radius() < 1.0)


def _noise_for_snr(clean: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    if not np.isfinite(snr_db):
        return np.zeros_like(clean)
    power = np.mean(clean ** 2, axis=0)
    std = np.sqrt(power / 10 ** (snr_db / 10.0))
    return rng.standard_normal(clean.shape) * std


def make_lti_dataset(sys: LtiSystem, T: int, snr_db: float = np.inf,
                     state_policy: str = "oracle", seed: int = 0, burn_in: int = 100) -> Dataset:
    """White-noise excitation, output noise at ``snr_db`` and surrogate states.

    ``state_policy='noisy-oracle'`` perturbs the true states at the same SNR.
    """
    if T < 2:
        raise ValueError("need T >= 2")
    if state_policy not in ("oracle", "noisy-oracle"):
        raise ValueError(f"unknown state policy {state_policy!r}")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((T + burn_in, sys.n_u))
    X, Y = sys.simulate(u)
    u, X, Y = u[burn_in:], X[burn_in:], Y[burn_in:]
    y = Y + _noise_for_snr(Y, snr_db, rng)
    x = X + (_noise_for_snr(X, snr_db, rng) if state_policy == "noisy-oracle" else 0.0)
    emp = empirical_snr_db(Y, y) if np.isfinite(snr_db) else float("inf")
    meta = dict(generator="random-lti", seed=seed, snr_db=snr_db, empirical_snr_db=emp,
                state_policy=state_policy, burn_in=burn_in,
                params=dict(A=sys.A.tolist(), B=sys.B.tolist(), C=sys.C.tolist(), D=sys.D.tolist()))
    return Dataset(u, y, x, 1.0, meta)


def empirical_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    noise = noisy - clean
    return float(10 * np.log10(np.sum(clean ** 2) / np.sum(noise ** 2)))


# ---------------------------------------------------------------------- state policies


def output_diff_states(data: Dataset) -> np.ndarray:
    """Surrogate states ``[y, y']`` from central differences of the outputs."""
    y = data.y
    if y.shape[0] < 3:
        raise ValueError("need at least 3 samples")
    div = 2.0 * data.sample_time
    v = np.empty_like(y)
    v[1:-1] = (y[2:] - y[:-2]) / div
    v[0] = 2.0 * (y[1] - y[0]) / div
    v[-1] = 2.0 * (y[-1] - y[-2]) / div
    return np.hstack([y, v])


def oracle_states(data: Dataset) -> np.ndarray:
    """True states regenerated from the generator metadata carried by ``data``."""
    meta = data.meta
    gen = meta.get("generator")
    if gen == "msd":
        p = MsdParams(**meta["params"])
        inp = InputSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["input"].items()})
        run = simulate_msd(p, inp, int(meta["seed"]), T=data.T,
                           paper_exact_divisor=bool(meta.get("paper_exact_divisor", False)))
        return run.clean
    if gen == "random-lti":
        prm = meta["params"]
        sys = LtiSystem(*(np.asarray(prm[k], float) for k in ("A", "B", "C", "D")))
        return make_lti_dataset(sys, data.T, np.inf, "oracle", int(meta["seed"]),
                                int(meta.get("burn_in", 100))).x
    raise ValueError("oracle states need generator metadata (msd or random-lti)")
