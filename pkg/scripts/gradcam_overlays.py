"""Write GradCAM overlays for one attribute of a trained checkpoint, plus a mass summary."""

import argparse
from pathlib import Path

import numpy as np

from attrikit.calibration import CalibrationTable
from attrikit.data.batching import make_batch
from attrikit.data.manifest import DatasetManifest
from attrikit.data.transforms import AugmentationConfig
from attrikit.interpret import gradcam_batch, save_overlay
from attrikit.network import load_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("run_dir", help="directory holding model.atrk and calibration.tsv")
    ap.add_argument("manifest")
    ap.add_argument("--attribute", type=int, default=0)
    ap.add_argument("--split", default="test")
    ap.add_argument("--limit", type=int, default=8)
    ap.add_argument("--out", default="gradcam")
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args()

    run = Path(args.run_dir)
    net = load_checkpoint(run / "model.atrk")
    table = CalibrationTable.load(run / "calibration.tsv")
    manifest = DatasetManifest.load(args.manifest)
    view = manifest.split(args.split)
    aug = AugmentationConfig(eval_long_side=args.size)
    x, y = make_batch(view.images(), view.labels(), aug, np.random.default_rng(0), training=False,
                      mean=manifest.mean_pixel)
    maps = gradcam_batch(net, x, args.attribute)

    t = table.thresholds[args.attribute]
    hits = [hm.lower_half_fraction() for hm, lab in zip(maps, y[:, args.attribute]) if lab and hm.probability >= t]
    print(f"correct positives: {len(hits)}, mean lower-half mass: {np.mean(hits) if hits else float('nan'):.3f}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, hm in enumerate(maps[: args.limit]):
        shown = np.clip(x[i].transpose(1, 2, 0) + manifest.mean_pixel.astype(np.float32), 0, 1)
        save_overlay(shown, hm, out / f"{i:03d}_p{hm.probability:.2f}.ppm")
    print(f"wrote {min(args.limit, len(maps))} overlays to {out}")


if __name__ == "__main__":
    main()
