"""Exact recovery of stable LTI systems from noiseless data with true states."""
import argparse

from lrsysid.io import dump_json
from lrsysid.studies import RecoveryConfig, recovery_trial


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--nx", type=int, nargs="+", default=[2, 4])
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    rows = []
    for n_x in args.nx:
        for seed in range(args.seeds):
            r = recovery_trial(seed, RecoveryConfig(n_x=n_x))
            rows.append(r)
            print(f"n_x={n_x} seed={seed} J/|y|^2={r['objective'] / r['output_energy']:.3g} "
                  f"val={r['val_error']:.3g} steps={r['newton_steps']}", flush=True)
    if args.out:
        dump_json(rows, args.out)


if __name__ == "__main__":
    main()
