"""Command-line entry point: ``attrikit gen-data|train|calibrate|eval|interpret|gradcheck``.

Every subcommand takes ``--config PATH`` (flat key=value file). Plain keys set
training fields, ``net.``/``aug.``/``data.`` prefixes address the network,
augmentation and synthetic-data settings. Flags override file values.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from attrikit import config as cfgio
from attrikit.calibration import CalibrationTable, apply_thresholds
from attrikit.data.batching import make_batch
from attrikit.data.imageio import write_image
from attrikit.data.manifest import DatasetManifest
from attrikit.data.synthetic import generate_synthetic, standard_spec
from attrikit.data.transforms import AugmentationConfig
from attrikit.errors import ConfigError, DataError, NumericError, ShapeError
from attrikit.network import NetworkConfig, load_checkpoint, preset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("attrikit")


@dataclass
class DataConfig:
    """Synthetic dataset settings for ``gen-data``."""

    n: int = 0  # when > 0, overrides the split counts with an 80/10/10 split
    train: int = 2000
    val: int = 400
    test: int = 400
    size: int = 64
    seed: int = 0

    def split_counts(self) -> dict[str, int]:
        if self.n > 0:
            val = self.n // 10
            test = self.n // 10
            return {"train": self.n - val - test, "val": val, "test": test}
        return {"train": self.train, "val": self.val, "test": self.test}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _split_sections(values: dict[str, str]) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {"train": {}, "net": {}, "aug": {}, "data": {}}
    for key, value in values.items():
        head, dot, rest = key.partition(".")
        if dot and head in out:
            out[head][rest] = value
        elif dot:
            raise ConfigError(f"unknown config section {head!r} in key {key!r}")
        else:
            out["train"][key] = value
    return out


def _load_sections(args) -> dict[str, dict[str, str]]:
    values = cfgio.read_kv(args.config) if args.config else {}
    for item in getattr(args, "set", None) or []:
        values.update(cfgio.parse_kv(item))
    return _split_sections(values)


def _aug_config(sections) -> AugmentationConfig:
    return cfgio.apply_overrides(AugmentationConfig(), sections["aug"])


def _train_config(sections, args):
    from attrikit.train import TrainConfig

    tc = cfgio.apply_overrides(TrainConfig(), sections["train"])
    changes = {k: getattr(args, k) for k in ("epochs", "seed", "batch_size", "workers") if getattr(args, k, None) is not None}
    if getattr(args, "weighting", None):
        changes["weighting"] = args.weighting
    if getattr(args, "method", None):
        changes["calibration"] = args.method
    if getattr(args, "k", None) is not None:
        changes["fpr_k"] = args.k
    return dataclasses.replace(tc, augmentation=_aug_config(sections), **changes)


def _net_config(sections, args, num_attributes: int) -> NetworkConfig:
    base = preset(args.preset, num_attributes, args.width)
    net = cfgio.apply_overrides(base, sections["net"])
    return dataclasses.replace(net, num_attributes=num_attributes).validate()


def cmd_gen_data(args) -> int:
    sections = _load_sections(args)
    dc = cfgio.apply_overrides(DataConfig(), sections["data"])
    if args.n is not None:
        dc.n = args.n
    if args.seed is not None:
        dc.seed = args.seed
    spec = standard_spec(dc.split_counts(), seed=dc.seed, size=dc.size)
    manifest = generate_synthetic(spec, args.out)
    print(f"wrote {len(manifest.records)} images with {manifest.num_attributes} attributes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from attrikit.train import train

    sections = _load_sections(args)
    manifest = DatasetManifest.load(args.manifest)
    tc = _train_config(sections, args)
    nc = _net_config(sections, args, manifest.num_attributes)
    run = train(manifest, nc, tc, args.out, progress=not args.quiet)
    print(f"checkpoint={run.checkpoint} calibration={run.calibration} config_hash={run.config_hash}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from attrikit.train import calibrate

    sections = _load_sections(args)
    manifest = DatasetManifest.load(args.manifest)
    net = load_checkpoint(args.checkpoint)
    tc = _train_config(sections, args)
    table = calibrate(net, manifest.split("train"), tc.calibration, tc.fpr_k, tc.augmentation)
    if args.out:
        table.save(args.out)
    sys.stdout.write(table.to_text())
    return EXIT_OK


def _table_for(args, num_attributes: int) -> CalibrationTable:
    if args.calibration:
        return CalibrationTable.load(args.calibration)
    sibling = Path(args.checkpoint).with_name("calibration.tsv")
    if sibling.exists():
        return CalibrationTable.load(sibling)
    log.warning("no calibration table given; using 0.5 thresholds")
    return CalibrationTable.naive(num_attributes)


def cmd_eval(args) -> int:
    from attrikit.train import evaluate

    sections = _load_sections(args)
    manifest = DatasetManifest.load(args.manifest)
    net = load_checkpoint(args.checkpoint)
    table = _table_for(args, net.config.num_attributes)
    report = evaluate(net, manifest.split(args.split), table, _aug_config(sections))
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_interpret(args) -> int:
    from attrikit.interpret import gradcam_batch, save_overlay

    sections = _load_sections(args)
    aug = _aug_config(sections)
    manifest = DatasetManifest.load(args.manifest)
    net = load_checkpoint(args.checkpoint)
    m = net.config.num_attributes
    if not 0 <= args.attribute < m:
        raise ShapeError(f"attribute index {args.attribute} out of range for {m} attributes")
    table = _table_for(args, m)
    view = manifest.split(args.split)
    images = view.images()[: args.limit]
    labels = view.labels()[: args.limit]
    x, _ = make_batch(images, labels, aug, np.random.default_rng(0), training=False, mean=manifest.mean_pixel)
    maps = gradcam_batch(net, x, args.attribute)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = manifest.attribute_names[args.attribute]
    threshold = float(table.thresholds[args.attribute])
    for i, hm in enumerate(maps):
        stem = Path(view.records[i].path).stem
        shown = np.clip(x[i].transpose(1, 2, 0) + manifest.mean_pixel.astype(np.float32), 0, 1)
        save_overlay(shown, hm, out / f"{stem}_{name}.ppm")
        verdict = "positive" if hm.probability >= threshold else "negative"
        (out / f"{stem}_{name}.txt").write_text(
            f"attribute={name}\nprobability={hm.probability:.6f}\nthreshold={threshold:.6f}\n"
            f"prediction={verdict}\nlabel={int(labels[i, args.attribute])}\n"
            f"lower_half_fraction={hm.lower_half_fraction():.6f}\nspread={hm.spread():.6f}\n",
            encoding="utf-8",
        )
    print(f"wrote {len(maps)} heatmaps for {name} to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from attrikit.gradcheck import TOLERANCE, run_suite

    results = run_suite(range(args.seeds))
    failed = [r for r in results if not r.passed]
    worst = max(results, key=lambda r: r.rel_error)
    for r in failed:
        print(f"FAIL {r.name} seed={r.seed} rel_error={r.rel_error:.3e}")
    print(f"{len(results) - len(failed)}/{len(results)} checks under {TOLERANCE:g};"
          f" worst {worst.name} seed={worst.seed} rel_error={worst.rel_error:.3e}")
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attrikit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="extra config entry (repeatable)")
        return p

    p = common(sub.add_parser("gen-data", help="render a synthetic attribute dataset"))
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, help="total images, split 80/10/10")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("train", help="train a network and write checkpoint + calibration"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", default="resnet10", choices=["resnet10", "resnet18", "resnet34"])
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--weighting", choices=["deepmar", "none"])
    p.add_argument("--method", choices=["f1", "f1_pr", "fpr", "naive"])
    p.add_argument("--k", type=float)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("calibrate", help="per-attribute thresholds from the training split"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", choices=["f1", "f1_pr", "fpr", "naive"])
    p.add_argument("--k", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = common(sub.add_parser("eval", help="metrics report for one split"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--calibration")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("interpret", help="GradCAM overlays for one attribute"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attribute", type=int, required=True)
    p.add_argument("--calibration")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--limit", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_interpret)

    p = common(sub.add_parser("gradcheck", help="finite-difference verification of all gradients"))
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
