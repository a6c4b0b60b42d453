"""Command-line entry point: ``lrsysid {gen-data,fit,validate,bench-scaling}``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import datagen, io
from .config import ConfigError, FitConfig
from .errors import (DimensionError, Infeasible, InfeasibleEqualities, LrsysidError,
                     MissingStates, OutOfRange)
from .fitters import fit_ee, fit_lr, fit_stable_subspace, validate
from .models import Dataset, ModelStructure

EXIT_OK, EXIT_USAGE, EXIT_GENERATOR, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _fail(msg, code):
    raise CliError(msg, code)


# ---------------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        if args.generator == "msd":
            p = datagen.MsdParams(**({} if args.T is None else {"duration": args.T * 0.1}))
            run = datagen.simulate_msd(p, seed=args.seed, paper_exact_divisor=args.paper_exact_divisor)
            data, snr = run.dataset, run.snr_db
        else:
            sys_, _ = datagen.gen_random_lti(args.nx, args.nu, args.ny, args.rho_bar, args.seed)
            data = datagen.make_lti_dataset(sys_, args.T or 400, args.snr, args.state_policy, args.seed)
            snr = data.meta["empirical_snr_db"]
    except (OutOfRange, ValueError) as exc:
        _fail(f"generator failed: {exc}", EXIT_GENERATOR)
    io.write_dataset(data, out)
    print(f"wrote {out} (T={data.T}, SNR={snr:.2f} dB, seed={args.seed})")
    return EXIT_OK


# ---------------------------------------------------------------------- fit


def _load_data(path) -> Dataset:
    try:
        return io.read_dataset(path)
    except io.FormatError as exc:
        _fail(str(exc), EXIT_USAGE)


def prepare_states(data: Dataset, policy: str) -> Dataset:
    if policy == "file":
        if data.x is None:
            _fail("state_policy 'file' needs x columns in the dataset", EXIT_USAGE)
        return data
    try:
        x = datagen.output_diff_states(data) if policy == "central-diff" else datagen.oracle_states(data)
    except (ValueError, KeyError, TypeError) as exc:
        _fail(f"cannot build {policy} states: {exc}", EXIT_USAGE)
    return Dataset(data.u, data.y, x, data.sample_time, data.meta)


def build_structure(cfg: FitConfig, data: Dataset) -> ModelStructure:
    n_x = cfg.n_x if cfg.n_x is not None else data.x.shape[1]
    if data.x.shape[1] != n_x:
        _fail(f"config n_x={n_x} but the states have {data.x.shape[1]} columns", EXIT_USAGE)
    if cfg.linear or cfg.method == "stable-subspace":
        return ModelStructure.linear(n_x, data.n_u, data.n_y)
    return ModelStructure.polynomial(n_x, data.n_u, data.n_y, cfg.deg_e, cfg.deg_fx, cfg.deg_fu,
                                     cfg.deg_g, cfg.deg_gu, cfg.separable_f)


def run_fit(cfg: FitConfig, data: Dataset):
    data = prepare_states(data, cfg.state_policy)
    ms = build_structure(cfg, data)
    opts = cfg.solver_options()
    try:
        if cfg.method == "lr":
            return fit_lr(ms, data, cfg.mu, opts, scale_bound=cfg.scale_bound)
        if cfg.method == "ee":
            return fit_ee(ms, data, cfg.mu, opts, mu_wp=cfg.mu_wp, scale_bound=cfg.scale_bound)
        return fit_stable_subspace(data, ms.n_x, cfg.mu, opts, cfg.scale_bound)
    except (Infeasible, InfeasibleEqualities) as exc:
        _fail(f"infeasible: {exc}", EXIT_INFEASIBLE)
    except (DimensionError, MissingStates) as exc:
        _fail(str(exc), EXIT_USAGE)
    except (LrsysidError, np.linalg.LinAlgError, FloatingPointError) as exc:
        _fail(f"solver failure ({type(exc).__name__}): {exc}", EXIT_SOLVER)


def cmd_fit(args) -> int:
    try:
        cfg = FitConfig.load(args.config) if args.config else FitConfig()
        if args.method:
            cfg = FitConfig.from_dict({**cfg.to_dict(), "method": args.method})
    except ConfigError as exc:
        _fail(f"config: {exc}", EXIT_USAGE)
    data = _load_data(args.data)
    res = run_fit(cfg, data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_model(res.model, out / "model.json")
    rep = res.report.to_dict()
    rep.update(method=res.method, config=cfg.to_dict(), metrics=res.metrics,
               total_newton_steps=res.report.total_newton_steps, member=bool(res.is_member()[0]))
    io.dump_json(rep, out / "report.json")
    print(f"method={res.method} final_objective={res.report.final_objective:.17g} "
          f"train_nse={res.metrics['train_nse']:.6g} newton_steps={res.report.total_newton_steps} "
          f"termination={res.report.termination}")
    return EXIT_OK


# ---------------------------------------------------------------------- validate


def cmd_validate(args) -> int:
    try:
        model = io.load_model(args.model)
    except io.FormatError as exc:
        _fail(str(exc), EXIT_USAGE)
    data = _load_data(args.data)
    try:
        val = validate(model, data, args.x1)
    except ValueError as exc:
        _fail(str(exc), EXIT_USAGE)
    text = "inf" if val.diverged else f"{val.error:.17g}"
    print(f"normalized_error={text} diverged={str(val.diverged).lower()}")
    if args.json:
        io.dump_json({"normalized_error": val.error, "diverged": val.diverged}, args.json)
    return EXIT_OK


# ---------------------------------------------------------------------- bench-scaling

BENCH_COLUMNS = ("T", "seed", "newton_steps", "mean_step_us", "total_s", "final_objective")


def bench_trial(T: int, seed: int, degrees=(3, 3, 1), n_x: int = 4, mu: float = 1e-3) -> dict:
    """One scaling trial on MSD data of length T (n_x must be 4 for the MSD states)."""
    run = datagen.simulate_msd(seed=seed, T=T)
    data = run.dataset
    ms = ModelStructure.polynomial(n_x, 1, 1, degrees[0], degrees[1], 1, degrees[2], 1)
    t0 = time.perf_counter()
    res = fit_lr(ms, data, mu)
    total = time.perf_counter() - t0
    steps = res.report.step_wall_times_us
    return {"T": T, "seed": seed, "newton_steps": res.report.total_newton_steps,
            "mean_step_us": float(np.mean(steps)) if steps else float("nan"),
            "total_s": total, "final_objective": res.report.final_objective}


def loglog_slope(T, times) -> float:
    lt, ly = np.log(np.asarray(T, float)), np.log(np.asarray(times, float))
    return float(np.polyfit(lt, ly, 1)[0])


def summarize_bench(rows):
    Ts = sorted({r["T"] for r in rows})
    mean_step = [np.mean([r["mean_step_us"] for r in rows if r["T"] == T]) for T in Ts]
    mean_newton = [np.mean([r["newton_steps"] for r in rows if r["T"] == T]) for T in Ts]
    return {"T": Ts, "mean_step_us": mean_step, "mean_newton_steps": mean_newton,
            "slope": loglog_slope(Ts, mean_step),
            "newton_ratio": float(max(mean_newton) / min(mean_newton))}


def _bench_worker(job):
    T, seed, degrees = job
    try:
        return bench_trial(T, seed, degrees), None
    except (LrsysidError, np.linalg.LinAlgError) as exc:
        return None, f"T={T} seed={seed}: {type(exc).__name__}: {exc}"


def cmd_bench_scaling(args) -> int:
    Ts = sorted(set(args.T))
    if len(Ts) < 3:
        _fail("bench-scaling needs at least 3 distinct T values", EXIT_USAGE)
    seeds = list(range(args.seeds)) if args.seed_list is None else args.seed_list
    jobs = [(T, s, tuple(args.degrees)) for T in Ts for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_bench_worker, jobs))
    else:
        results = [_bench_worker(j) for j in jobs]
    rows = [r for r, _ in results if r is not None]
    errors = [e for _, e in results if e is not None]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, BENCH_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if isinstance(r[k], float) else r[k]) for k in BENCH_COLUMNS})
    for e in errors:
        print(f"trial failed: {e}", file=sys.stderr)
    if len({r["T"] for r in rows}) >= 3:
        summary = summarize_bench(rows)
        io.dump_json(summary, out.with_suffix(".summary.json"))
        print(f"slope={summary['slope']:.4f} newton_ratio={summary['newton_ratio']:.3f}")
    return EXIT_SOLVER if errors else EXIT_OK


# ---------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: error: {message}", EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lrsysid", description="Stable state-space identification toolkit.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("generator", choices=["msd", "random-lti"])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--T", type=int, default=None)
    g.add_argument("--out", default="data.csv")
    g.add_argument("--paper-exact-divisor", action="store_true",
                   help="divide central differences by Ts instead of 2 Ts")
    g.add_argument("--nx", type=int, default=4)
    g.add_argument("--nu", type=int, default=1)
    g.add_argument("--ny", type=int, default=1)
    g.add_argument("--snr", type=float, default=float("inf"))
    g.add_argument("--rho-bar", type=float, default=0.95)
    g.add_argument("--state-policy", choices=["oracle", "noisy-oracle"], default="oracle")
    g.set_defaults(func=cmd_gen_data)

    f = sub.add_parser("fit", help="fit a model to a dataset")
    f.add_argument("--data", required=True)
    f.add_argument("--config", default=None, help="JSON fit configuration")
    f.add_argument("--method", choices=["lr", "ee", "stable-subspace"], default=None)
    f.add_argument("--out-dir", default="fit_out")
    f.set_defaults(func=cmd_fit)

    v = sub.add_parser("validate", help="normalized simulation error of a model")
    v.add_argument("--model", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--x1", choices=["data", "zero"], default="data")
    v.add_argument("--json", default=None)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench-scaling", help="per-Newton-step time versus T")
    b.add_argument("--T", type=int, nargs="+", default=[200, 400, 800, 1600, 3200])
    b.add_argument("--seeds", type=int, default=3)
    b.add_argument("--seed-list", type=int, nargs="+", default=None)
    b.add_argument("--degrees", type=int, nargs=3, default=[3, 3, 1])
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", default="bench.csv")
    b.set_defaults(func=cmd_bench_scaling)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
