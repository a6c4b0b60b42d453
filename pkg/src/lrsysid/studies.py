"""Reusable experiment drivers shared by scripts/ and the test suite."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .datagen import MsdParams, InputSpec, gen_random_lti, make_lti_dataset, simulate_msd
from .fitters import FitResult, fit_ee, fit_lr, fit_stable_subspace, lti_spectral_radius, validate
from .models import ModelStructure

VALIDATION_SEED_OFFSET = 10_000


@dataclass(frozen=True)
class RecoveryConfig:
    n_x: int = 2
    T: int = 400
    rho_bar: float = 0.95
    mu: float = 1e-3


@dataclass(frozen=True)
class MsdStudyConfig:
    degrees: tuple = (3, 3, 1)  # (deg e, deg f in x, deg g in x)
    mu: float = 1e-3
    params: MsdParams = MsdParams()
    inputs: InputSpec = InputSpec()


@dataclass(frozen=True)
class BiasConfig:
    n_x: int = 4
    T: int = 400
    snr_db: float = 20.0
    rho_bar: float = 0.95
    mu: float = 1e-3


def recovery_trial(seed: int, cfg: RecoveryConfig = RecoveryConfig()) -> dict:
    """Noiseless data from a random stable LTI system, true states, linear LR fit."""
    sys_, _ = gen_random_lti(cfg.n_x, 1, 1, cfg.rho_bar, seed)
    train = make_lti_dataset(sys_, cfg.T, np.inf, "oracle", seed)
    val = make_lti_dataset(sys_, cfg.T, np.inf, "oracle", seed + VALIDATION_SEED_OFFSET)
    res = fit_lr(ModelStructure.linear(cfg.n_x, 1, 1), train, cfg.mu)
    return {
        "seed": seed, "n_x": cfg.n_x,
        "objective": res.report.final_objective,
        "output_energy": float(np.sum(train.y ** 2)),
        "val_error": validate(res.model, val).error,
        "newton_steps": res.report.total_newton_steps,
        "member": res.is_member()[0],
        "spectral_radius": lti_spectral_radius(res.model),
    }


def msd_structure(cfg: MsdStudyConfig = MsdStudyConfig()) -> ModelStructure:
    d_e, d_f, d_g = cfg.degrees
    return ModelStructure.polynomial(4, 1, 1, d_e, d_f, 1, d_g, 1)


def msd_trial(seed: int, cfg: MsdStudyConfig = MsdStudyConfig(), methods=("lr", "ee"),
              keep_results: bool = False) -> dict:
    """Fit each method on one MSD record; validate on a fresh record.

    With ``keep_results`` each method entry also carries its FitResult under "result".
    """
    train = simulate_msd(cfg.params, cfg.inputs, seed=seed).dataset
    val = simulate_msd(cfg.params, cfg.inputs, seed=seed + VALIDATION_SEED_OFFSET).dataset
    ms = msd_structure(cfg)
    out = {"seed": seed}
    for name in methods:
        res: FitResult = (fit_lr if name == "lr" else fit_ee)(ms, train, cfg.mu)
        v = validate(res.model, val)
        out[name] = {"val_error": v.error, "diverged": v.diverged,
                     "objective": res.report.final_objective,
                     "newton_steps": res.report.total_newton_steps,
                     "member": res.is_member()[0]}
        if keep_results:
            out[name]["result"] = res
    return out


def bias_trial(seed: int, cfg: BiasConfig = BiasConfig()) -> dict:
    """LR versus the stable-subspace baseline under noisy surrogate states."""
    sys_, _ = gen_random_lti(cfg.n_x, 1, 1, cfg.rho_bar, seed)
    train = make_lti_dataset(sys_, cfg.T, cfg.snr_db, "noisy-oracle", seed)
    val = make_lti_dataset(sys_, cfg.T, cfg.snr_db, "noisy-oracle", seed + VALIDATION_SEED_OFFSET)
    lr = fit_lr(ModelStructure.linear(cfg.n_x, 1, 1), train, cfg.mu)
    ss = fit_stable_subspace(train, cfg.n_x, cfg.mu)
    return {"seed": seed,
            "lr": validate(lr.model, val).error,
            "stable_subspace": validate(ss.model, val).error,
            "lr_member": lr.is_member()[0], "ss_member": ss.is_member()[0],
            "lr_radius": lti_spectral_radius(lr.model), "ss_radius": lti_spectral_radius(ss.model),
            "lr_objective": lr.report.final_objective,
            "lr_newton_steps": lr.report.total_newton_steps}


def summarize_msd(trials) -> dict:
    out = {}
    for name in ("lr", "ee"):
        errs = [t[name]["val_error"] for t in trials if name in t]
        if errs:
            out[name] = {"median": float(np.median(errs)),
                         "diverged": int(sum(t[name]["diverged"] for t in trials if name in t))}
    return out


def config_dict(cfg) -> dict:
    return asdict(cfg)
