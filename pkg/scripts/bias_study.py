"""LR versus the stable-subspace baseline with noisy surrogate states.

    python scripts/bias_study.py --systems 20 --snr 20
"""
import argparse

from lrsysid.io import dump_json
from lrsysid.studies import BiasConfig, bias_trial, config_dict


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--systems", type=int, default=20)
    ap.add_argument("--nx", type=int, default=4)
    ap.add_argument("--T", type=int, default=400)
    ap.add_argument("--snr", type=float, default=20.0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    cfg = BiasConfig(n_x=args.nx, T=args.T, snr_db=args.snr)
    trials = []
    for seed in range(args.systems):
        tr = bias_trial(seed, cfg)
        trials.append(tr)
        print(f"system={seed} lr={tr['lr']:.4g} stable_subspace={tr['stable_subspace']:.4g}", flush=True)
    wins = sum(t["lr"] <= t["stable_subspace"] for t in trials)
    print(f"LR at least as good in {wins}/{len(trials)} trials ({100.0 * wins / len(trials):.0f}%)")
    if args.out:
        dump_json({"config": config_dict(cfg), "trials": trials, "lr_wins": wins}, args.out)


if __name__ == "__main__":
    main()
