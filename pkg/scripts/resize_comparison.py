"""Squash-resize versus aspect-preserving letterboxing on tall synthetic images."""

import argparse
import tempfile

import numpy as np

from attrikit import experiments


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=6)
    args = ap.parse_args()

    workdir = args.workdir or tempfile.mkdtemp(prefix="attrikit-resize-")
    res = experiments.resize_policy_comparison(workdir, args.seeds, args.epochs, progress=True)
    for policy, accs in res.items():
        print(f"{policy:>7}: " + " ".join(f"{a:.4f}" for a in accs) + f"  mean {np.mean(accs):.4f}")


if __name__ == "__main__":
    main()
