"""Training, scoring, calibration and evaluation loops."""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from attrikit import config as cfgio
from attrikit.calibration import METHODS, CalibrationTable, apply_thresholds, calibrate_scores
from attrikit.data.batching import iterate_batches
from attrikit.data.manifest import DatasetManifest, SplitView
from attrikit.data.transforms import AugmentationConfig
from attrikit.errors import ConfigError, DataError, NumericError, ShapeError
from attrikit.losses import LossConfig, compute_sample_weights, total_loss, weighted_bce
from attrikit.metrics import MetricsReport, evaluate_predictions, example_based
from attrikit.network import Network, NetworkConfig, build, load_checkpoint, save_checkpoint
from attrikit.ops import sigmoid_array
from attrikit.optim import OptimizerState, sgd_nesterov_step
from attrikit.tensor import Tape, backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    base_lr: float = 0.1
    lr_drop_milestones: tuple[float, ...] = (0.5, 0.83)
    lr_drop_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    weighting: str = "deepmar"
    sigma: float = 1.0
    calibration: str = "f1"
    fpr_k: float = 0.2
    select_best: bool = True
    seed: int = 0
    workers: int = 0
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)

    def __post_init__(self):
        self.lr_drop_milestones = tuple(float(m) for m in self.lr_drop_milestones)
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        ms = self.lr_drop_milestones
        if any(not 0 < m < 1 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"milestones must be strictly increasing inside (0, 1), got {ms}")
        if self.base_lr <= 0 or self.lr_drop_factor <= 0 or self.sigma <= 0:
            raise ConfigError("rates, drop factor and sigma must be positive")
        LossConfig(weighting=self.weighting, sigma=self.sigma)
        if self.calibration not in METHODS:
            raise ConfigError(f"calibration must be one of {METHODS}, got {self.calibration!r}")
        if not 0 < self.fpr_k < 1:
            raise ConfigError("fpr_k must lie in (0, 1)")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``; drops at floor(milestone * epochs)."""
        drops = sum(1 for m in self.lr_drop_milestones if epoch >= math.floor(m * self.epochs))
        return self.base_lr / self.lr_drop_factor**drops


def resolved_config_text(net_config: NetworkConfig, train_config: TrainConfig) -> str:
    lines = cfgio.dump(train_config)
    lines += cfgio.dump(train_config.augmentation, "aug.")
    lines += ["net." + l for l in net_config.to_text().splitlines()]
    return "\n".join(lines) + "\n"


def config_hash(net_config: NetworkConfig, train_config: TrainConfig) -> str:
    return hashlib.sha256(resolved_config_text(net_config, train_config).encode()).hexdigest()[:16]


@dataclass
class RunArtifacts:
    checkpoint: Path
    calibration: Path
    log: Path
    config_hash: str
    seed: int
    history: list[dict] = field(default_factory=list)
    metrics: dict[str, Path] = field(default_factory=dict)


def predict_proba(net: Network, view: SplitView, aug: AugmentationConfig, batch_size: int = 64) -> np.ndarray:
    """Eval-mode sigmoid probabilities, in the view's record order."""
    out = np.zeros((len(view), net.config.num_attributes), dtype=np.float32)
    for x, _, idx in iterate_batches(view, batch_size, aug, training=False, shuffle=False):
        out[idx] = sigmoid_array(net.forward(x, training=False).data)
    return out


def train(
    manifest: DatasetManifest,
    net_config: NetworkConfig,
    train_config: TrainConfig,
    out_dir,
    progress: bool = False,
) -> RunArtifacts:
    """Run the full schedule and write checkpoint, calibration table and log to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc = train_config
    train_view = manifest.split("train")
    if len(train_view) == 0:
        raise DataError("training split is empty")
    if net_config.num_attributes != manifest.num_attributes:
        raise ShapeError(
            f"network predicts {net_config.num_attributes} attributes, dataset has {manifest.num_attributes}"
        )
    manifest.check_positive_counts()
    val_view = manifest.split("val")
    labels_train = train_view.labels()
    weights = compute_sample_weights(labels_train, tc.sigma) if tc.weighting == "deepmar" else None
    gamma = LossConfig(weighting=tc.weighting, sigma=tc.sigma).gammas(manifest.num_attributes)

    net = build(net_config, tc.seed)
    names = list(net.parameters().keys())
    state = OptimizerState(lr=tc.base_lr, momentum=tc.momentum, weight_decay=tc.weight_decay)
    chash = config_hash(net_config, tc)
    log_path = out / "train.log"
    history: list[dict] = []
    best_f1 = -1.0
    best_state = None
    start = time.perf_counter()

    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={chash} seed={tc.seed}\n")
        for line in resolved_config_text(net_config, tc).splitlines():
            fh.write(f"# {line}\n")
        for epoch in range(tc.epochs):
            state.lr = tc.lr_at(epoch)
            total, count = 0.0, 0
            for b, (x, y, _) in enumerate(iterate_batches(
                train_view, tc.batch_size, tc.augmentation, seed=tc.seed, epoch=epoch, training=True,
                workers=tc.workers,
            )):
                if x.shape[0] < 2 and len(train_view) >= 2:
                    continue  # a lone trailing sample gives degenerate batch statistics
                params = net.parameters()
                try:
                    with Tape() as tape:
                        logits = net.forward(x, training=True)
                        loss = total_loss(weighted_bce(logits, y, weights), gamma)
                    value = loss.item()
                    if not math.isfinite(value):
                        raise NumericError(f"loss became {value}")
                    net.zero_grad()
                    backward(loss, tape)
                except NumericError as exc:
                    fh.write(f"# diverged at epoch={epoch + 1} batch={b} lr={state.lr:g}: {exc}\n")
                    raise NumericError(f"diverged at epoch {epoch + 1}, batch {b} (lr {state.lr:g}): {exc}") from exc
                sgd_nesterov_step(list(params.values()), [p.grad for p in params.values()], state, names)
                total += value * x.shape[0]
                count += x.shape[0]
            record = {"epoch": epoch + 1, "loss": total / max(count, 1), "lr": state.lr,
                      "elapsed": time.perf_counter() - start}
            if len(val_view) and tc.select_best:
                probs = predict_proba(net, val_view, tc.augmentation)
                record["val_f1"] = example_based(val_view.labels(), (probs >= 0.5).astype(np.int8))[3]
                if record["val_f1"] > best_f1:
                    best_f1 = record["val_f1"]
                    best_state = {k: v.copy() for k, v in net.state().items()}
            history.append(record)
            line = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in record.items())
            fh.write(line + "\n")
            fh.flush()
            if progress:
                print(line, flush=True)
            log.info(line)

    if best_state is not None:
        for k, arr in net.state().items():
            arr[...] = best_state[k]
    ckpt = out / "model.atrk"
    save_checkpoint(net, ckpt)
    table = calibrate(net, train_view, tc.calibration, tc.fpr_k, tc.augmentation)
    cal_path = out / "calibration.tsv"
    table.save(cal_path)
    return RunArtifacts(ckpt, cal_path, log_path, chash, tc.seed, history)


def calibrate(
    net: Network,
    train_view: SplitView,
    method: str = "f1",
    k: float = 0.2,
    aug: Optional[AugmentationConfig] = None,
) -> CalibrationTable:
    """Thresholds from training-split scores; any other split is rejected."""
    if train_view.name != "train":
        raise DataError(f"calibration accepts only the training split, got {train_view.name!r}")
    aug = aug or AugmentationConfig()
    names = train_view.manifest.attribute_names
    if method == "naive":
        return CalibrationTable.naive(len(names), names)
    probs = predict_proba(net, train_view, aug)
    return calibrate_scores(probs, train_view.labels(), method, k, names, split=train_view.name)


def evaluate(
    net_or_checkpoint,
    view: SplitView,
    table: CalibrationTable,
    aug: Optional[AugmentationConfig] = None,
    probabilities: Optional[np.ndarray] = None,
) -> MetricsReport:
    net = net_or_checkpoint if isinstance(net_or_checkpoint, Network) else load_checkpoint(net_or_checkpoint)
    if table.num_attributes != net.config.num_attributes or table.num_attributes != view.manifest.num_attributes:
        raise ShapeError(
            f"calibration table covers {table.num_attributes} attributes, network {net.config.num_attributes},"
            f" dataset {view.manifest.num_attributes}"
        )
    probs = predict_proba(net, view, aug or AugmentationConfig()) if probabilities is None else probabilities
    preds = apply_thresholds(probs, table)
    return evaluate_predictions(view.labels(), probs, preds, view.manifest.attribute_names, table.thresholds)
