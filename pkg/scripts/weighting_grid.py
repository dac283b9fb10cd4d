"""Compare loss weighting and threshold calibration on a heavily imbalanced synthetic set."""

import argparse
import tempfile

from attrikit import experiments


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir")
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    workdir = args.workdir or tempfile.mkdtemp(prefix="attrikit-grid-")
    grid = experiments.weighting_calibration_grid(workdir, args.epochs, args.seed, progress=True)
    cols = ("mA", "example_accuracy", "example_precision", "example_recall", "example_f1")
    print("config\t" + "\t".join(cols))
    for name, summary in grid.items():
        print(name + "\t" + "\t".join(f"{summary[c]:.4f}" for c in cols))


if __name__ == "__main__":
    main()
