"""Desk-scale experiments shared by ``scripts/`` and the acceptance suite.

Each function generates its own synthetic data under a work directory,
trains what it needs and returns plain numbers, so callers only decide
where to print them.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from attrikit.calibration import CalibrationTable, apply_thresholds
from attrikit.data.batching import make_batch
from attrikit.data.manifest import DatasetManifest
from attrikit.data.synthetic import AttributeSpec, SyntheticSpec, generate_synthetic, standard_spec
from attrikit.data.transforms import AugmentationConfig
from attrikit.interpret import gradcam_batch
from attrikit.metrics import MetricsReport, evaluate_predictions
from attrikit.network import Network, NetworkConfig, load_checkpoint, preset
from attrikit.train import TrainConfig, calibrate, predict_proba, train


@dataclass
class EndToEndResult:
    report: MetricsReport
    wall_seconds: float
    run_dir: Path
    manifest: DatasetManifest
    net: Network
    table: CalibrationTable
    history: list[dict] = field(default_factory=list)


def end_to_end_configs(epochs: int = 30, seed: int = 0, width: int = 8) -> tuple[NetworkConfig, TrainConfig]:
    """The 10-layer residual setup used for the learning check."""
    net = preset("resnet10", 8, width)
    aug = AugmentationConfig(long_sides=(56, 64, 72), eval_long_side=64)
    return net, TrainConfig(epochs=epochs, batch_size=16, seed=seed, augmentation=aug)


def end_to_end(workdir, epochs: int = 30, seed: int = 0, width: int = 8, data_seed: int = 0,
               progress: bool = False) -> EndToEndResult:
    """Generate the 2000/400/400 set, train, calibrate on train and evaluate on test."""
    work = Path(workdir)
    manifest = generate_synthetic(standard_spec(seed=data_seed), work / "data")
    net_cfg, tc = end_to_end_configs(epochs, seed, width)
    start = time.perf_counter()
    run = train(manifest, net_cfg, tc, work / "run", progress=progress)
    net = load_checkpoint(run.checkpoint)
    table = CalibrationTable.load(run.calibration)
    probs = predict_proba(net, manifest.split("test"), tc.augmentation)
    report = evaluate_predictions(
        manifest.split("test").labels(), probs, apply_thresholds(probs, table), manifest.attribute_names,
        table.thresholds,
    )
    wall = time.perf_counter() - start
    return EndToEndResult(report, wall, work / "run", manifest, net, table, run.history)


def smoothed(values: Sequence[float], window: int = 5) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` entries average what is available."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def lower_half_localization(
    net: Network,
    manifest: DatasetManifest,
    table: CalibrationTable,
    attribute: int = 0,
    splits: Sequence[str] = ("val", "test"),
    aug: AugmentationConfig | None = None,
) -> tuple[float, int]:
    """Mean lower-half heatmap mass over correctly predicted positives, and how many there were."""
    aug = aug or AugmentationConfig()
    fractions = []
    for split in splits:
        view = manifest.split(split)
        images, labels = view.images(), view.labels()
        for start in range(0, len(view), 64):
            x, y = make_batch(images[start:start + 64], labels[start:start + 64], aug,
                              np.random.default_rng(0), training=False, mean=manifest.mean_pixel)
            for hm, lab in zip(gradcam_batch(net, x, attribute), y[:, attribute]):
                if lab == 1 and hm.probability >= table.thresholds[attribute]:
                    fractions.append(hm.lower_half_fraction())
    return (float(np.mean(fractions)) if fractions else 0.0), len(fractions)


def imbalanced_spec(seed: int = 0, counts: dict[str, int] | None = None) -> SyntheticSpec:
    """Twelve attributes, most of them rare (prevalence 0.45 down to 0.03)."""
    tokens = [
        ("red_square", "square", "red", 0.45),
        ("blue_circle", "circle", "blue", 0.3),
        ("green_triangle", "triangle", "green", 0.2),
        ("yellow_cross", "cross", "yellow", 0.12),
        ("magenta_ring", "ring", "magenta", 0.08),
        ("cyan_diamond", "diamond", "cyan", 0.06),
        ("orange_hbar", "hbar", "orange", 0.05),
        ("white_vbar", "vbar", "white", 0.04),
        ("purple_square", "square", "purple", 0.04),
        ("black_circle", "circle", "black", 0.03),
        ("red_ring", "ring", "red", 0.03),
        ("blue_diamond", "diamond", "blue", 0.03),
    ]
    attrs = [AttributeSpec(n, s, c, "anywhere", p) for n, s, c, p in tokens]
    return SyntheticSpec(
        attributes=attrs,
        split_counts=dict(counts or {"train": 1200, "val": 300, "test": 600}),
        height_range=(48, 48),
        token_scale=(0.22, 0.3),
        noise=0.06,
        seed=seed,
    )


def weighting_calibration_grid(workdir, epochs: int = 12, seed: int = 0, width: int = 8,
                               progress: bool = False, spec: SyntheticSpec | None = None,
                               long_side: int = 48) -> dict[str, dict[str, float]]:
    """Test metrics for {no weighting, DeepMAR} x {naive, F1, FPR@0.2} on the imbalanced set.

    Keys are ``<weighting>+<method>``. Both readings of F1 calibration are
    reported: ``f1`` (ROC equal error rate) and ``f1_pr`` (precision/recall
    break-even). Thresholds always come from the training split.
    """
    work = Path(workdir)
    manifest = generate_synthetic(spec or imbalanced_spec(seed), work / "data")
    aug = AugmentationConfig(long_sides=(long_side - 8, long_side, long_side + 8), eval_long_side=long_side)
    out: dict[str, dict[str, float]] = {}
    test = manifest.split("test")
    for weighting, methods in (("none", ("naive", "f1", "f1_pr")), ("deepmar", ("f1", "f1_pr", "fpr"))):
        net_cfg = preset("resnet10", manifest.num_attributes, width)
        tc = TrainConfig(epochs=epochs, seed=seed, weighting=weighting, augmentation=aug)
        run = train(manifest, net_cfg, tc, work / weighting, progress=progress)
        net = load_checkpoint(run.checkpoint)
        probs = predict_proba(net, test, aug)
        for method in methods:
            table = calibrate(net, manifest.split("train"), method, 0.2, aug)
            report = evaluate_predictions(test.labels(), probs, apply_thresholds(probs, table),
                                          manifest.attribute_names, table.thresholds)
            out[f"{weighting}+{method}"] = report.summary()
    return out


def tall_spec(seed: int = 0, counts: dict[str, int] | None = None) -> SyntheticSpec:
    """Portrait images (height/width between 2 and 4) whose same-coloured attributes differ only in proportions.

    Squashing such an image to a square divides every token's height/width
    ratio by the image aspect, so the ratio ranges of square/hbar/widerect
    and of tallrect/vbar overlap after a squash but stay apart under
    letterboxing. Pixel noise is off: stretched noise texture would reveal
    the squash factor.
    """
    tokens = [
        ("red_square", "square", "red", 0.35),
        ("red_hbar", "hbar", "red", 0.35),
        ("red_widerect", "widerect", "red", 0.35),
        ("blue_tallrect", "tallrect", "blue", 0.4),
        ("blue_vbar", "vbar", "blue", 0.4),
    ]
    attrs = [AttributeSpec(n, s, c, "anywhere", p) for n, s, c, p in tokens]
    return SyntheticSpec(
        attributes=attrs,
        split_counts=dict(counts or {"train": 800, "val": 200, "test": 400}),
        height_range=(64, 64),
        aspect_range=(2.0, 4.0),
        token_scale=(0.7, 0.9),
        noise=0.0,
        seed=seed,
    )


def resize_policy_comparison(workdir, seeds: Sequence[int] = (0, 1, 2), epochs: int = 10, width: int = 8,
                             progress: bool = False) -> dict[str, list[float]]:
    """Test example accuracy per seed for squash-resize 64->56 versus aspect-preserving letterboxing."""
    work = Path(workdir)
    policies = {
        "fixed": AugmentationConfig(resize_policy="fixed", resize=64, crop=56),
        "aspect": AugmentationConfig(resize_policy="aspect_preserving", long_sides=(56, 64, 72), eval_long_side=64),
    }
    out: dict[str, list[float]] = {k: [] for k in policies}
    for seed in seeds:
        manifest = generate_synthetic(tall_spec(seed), work / f"data{seed}")
        test = manifest.split("test")
        for name, aug in policies.items():
            net_cfg = preset("resnet10", manifest.num_attributes, width)
            tc = TrainConfig(epochs=epochs, seed=seed, augmentation=aug, calibration="f1")
            run = train(manifest, net_cfg, tc, work / f"{name}{seed}", progress=progress)
            net = load_checkpoint(run.checkpoint)
            table = CalibrationTable.load(run.calibration)
            probs = predict_proba(net, test, aug)
            report = evaluate_predictions(test.labels(), probs, apply_thresholds(probs, table),
                                          manifest.attribute_names, table.thresholds)
            out[name].append(report.example_accuracy)
    return out


def with_epochs(tc: TrainConfig, epochs: int) -> TrainConfig:
    return dataclasses.replace(tc, epochs=epochs)
