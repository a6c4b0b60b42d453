"""LR versus EE on the two-mass chain with hardening springs.

    python scripts/msd_study.py --seeds 10 --out results/msd.json
"""
import argparse
import json
import time

from lrsysid.io import dump_json
from lrsysid.studies import MsdStudyConfig, config_dict, msd_trial, summarize_msd


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--degrees", type=int, nargs=3, default=[3, 3, 1])
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    cfg = MsdStudyConfig(degrees=tuple(args.degrees))
    trials = []
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        t0 = time.perf_counter()
        tr = msd_trial(seed, cfg)
        trials.append(tr)
        print(f"seed={seed} lr={tr['lr']['val_error']:.4g} ee={tr['ee']['val_error']:.4g} "
              f"({time.perf_counter() - t0:.1f}s)", flush=True)
    summary = summarize_msd(trials)
    print(json.dumps(summary, indent=2))
    if args.out:
        dump_json({"config": config_dict(cfg), "trials": trials, "summary": summary}, args.out)


if __name__ == "__main__":
    main()
