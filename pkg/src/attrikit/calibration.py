"""Per-attribute decision thresholds chosen from training-set ROC curves.

Decision rule everywhere: an attribute is predicted present iff
``probability >= threshold``.

Operating points of an empirical ROC are indexed by the sorted distinct
scores ``s_0 < ... < s_{U-1}``: point ``k < U`` accepts ``score >= s_k``
and point ``U`` accepts nothing. Every threshold in ``(s_{k-1}, s_k]``
realizes point ``k``.

* ``f1`` (equal error rate): the point minimizing ``|TPR - (1 - FPR)|``;
  ties go to the point whose threshold is closest to 0.5 (then the lower
  one). The returned threshold is the midpoint of the chosen point's
  interval, so the gap between two scores is split evenly. Point 0 returns
  ``s_0`` and point ``U`` returns the float just above ``s_{U-1}``.
* ``f1_pr``: same, but balances precision against recall.
* ``fpr``: the smallest score ``s_k`` with ``FPR <= k`` (the most recall the
  false-positive budget allows).
* ``naive``: 0.5 for every attribute.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from attrikit.errors import CalibrationDegenerateError, DataError, ShapeError

log = logging.getLogger(__name__)

METHODS = ("f1", "f1_pr", "fpr", "naive")
TRAIN_SPLIT = "train"


@dataclass(frozen=True)
class RocCurve:
    """Empirical ROC at every distinct score (ascending)."""

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    positives: int
    negatives: int

    def with_endpoints(self):
        """(thresholds, tpr, fpr) including (1, 1) at -inf and (0, 0) at +inf."""
        t = np.concatenate([[-np.inf], self.thresholds, [np.inf]])
        return t, np.concatenate([[1.0], self.tpr, [0.0]]), np.concatenate([[1.0], self.fpr, [0.0]])

    def auc(self) -> float:
        _, tpr, fpr = self.with_endpoints()
        return float(np.trapezoid(tpr[::-1], fpr[::-1]))


def roc_curve(scores, labels) -> RocCurve:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores but {labels.size} labels")
    if labels.size and ((labels != 0) & (labels != 1)).any():
        raise DataError("labels must be 0 or 1")
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    if pos.size == 0 or neg.size == 0:
        raise CalibrationDegenerateError("ROC needs at least one positive and one negative label")
    thr = np.unique(scores)
    tp = pos.size - np.searchsorted(pos, thr, side="left")
    fp = neg.size - np.searchsorted(neg, thr, side="left")
    return RocCurve(thr, tp / pos.size, fp / neg.size, tp, fp, int(pos.size), int(neg.size))


def _just_above(x: float) -> float:
    return float(np.nextafter(x, np.inf))


def _interval_thresholds(thr: np.ndarray) -> np.ndarray:
    """Representative threshold for each operating point 0..U."""
    lo, hi = thr[:-1], thr[1:]
    mid = lo + (hi - lo) / 2
    mid = np.where(mid > lo, mid, hi)
    return np.concatenate([[thr[0]], mid, [_just_above(thr[-1])]])


def _pick(gap: np.ndarray, reps: np.ndarray, valid: Optional[np.ndarray] = None) -> float:
    if valid is not None:
        gap = np.where(valid, gap, np.inf)
    best = gap.min()
    cand = np.flatnonzero(gap == best)
    # exact distances: float subtraction can merge neighbours of 0.5
    dist = [abs(Fraction(float(reps[i])) - Fraction(1, 2)) for i in cand]
    closest = min(dist)
    return float(min(reps[i] for i, d in zip(cand, dist) if d == closest))


def f1_calibrate(curve: RocCurve, balance: str = "roc") -> float:
    """Equal-error-rate threshold (``balance="roc"``) or precision/recall
    break-even threshold (``balance="pr"``).

    Gaps are formed as exact integer ratios before a single division, so
    mathematically equal gaps compare equal and the tie rule is exact.
    """
    tp = np.concatenate([curve.tp, [0]]).astype(np.int64)
    fp = np.concatenate([curve.fp, [0]]).astype(np.int64)
    pos, neg = curve.positives, curve.negatives
    reps = _interval_thresholds(curve.thresholds)
    if balance == "roc":
        # |TP/P - (1 - FP/Nn)| = |TP*Nn - (Nn - FP)*P| / (P*Nn)
        return _pick(np.abs(tp * neg - (neg - fp) * pos) / (pos * neg), reps)
    if balance == "pr":
        # |TP/(TP+FP) - TP/P| = TP*|P - (TP+FP)| / ((TP+FP)*P)
        predicted = tp + fp
        den = np.maximum(predicted, 1) * pos
        return _pick(tp * np.abs(pos - predicted) / den, reps, valid=predicted > 0)
    raise ValueError(f"balance must be 'roc' or 'pr', got {balance!r}")


def fpr_calibrate(curve: RocCurve, k: float) -> float:
    if not 0 <= k <= 1:
        raise ValueError(f"FPR budget must lie in [0, 1], got {k}")
    # FPR <= k  <=>  FP <= floor(k * Nn), evaluated exactly
    ok = np.flatnonzero(curve.fp <= math.floor(Fraction(k) * curve.negatives))
    if ok.size == 0:
        return _just_above(curve.thresholds[-1])
    return float(curve.thresholds[ok[0]])


@dataclass
class CalibrationTable:
    thresholds: np.ndarray
    methods: list[str]
    names: list[str] = field(default_factory=list)
    split: str = TRAIN_SPLIT

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        if not self.names:
            self.names = [f"attr{i}" for i in range(len(self.thresholds))]
        if not (len(self.names) == len(self.methods) == len(self.thresholds)):
            raise ShapeError("names, methods and thresholds must have equal length")

    @property
    def num_attributes(self) -> int:
        return len(self.thresholds)

    @classmethod
    def naive(cls, num_attributes: int, names: Sequence[str] = ()) -> "CalibrationTable":
        return cls(np.full(num_attributes, 0.5), ["naive"] * num_attributes, list(names))

    def to_text(self) -> str:
        lines = [f"# split={self.split}"]
        for name, t, m in zip(self.names, self.thresholds, self.methods):
            lines.append(f"{name}\t{float(t)!r}\t{m}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CalibrationTable":
        split = TRAIN_SPLIT
        names, thr, methods = [], [], []
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key == "split":
                    split = value
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"calibration line needs 3 tab-separated fields: {line!r}")
            names.append(parts[0])
            thr.append(float(parts[1]))
            methods.append(parts[2])
        return cls(np.array(thr), methods, names, split)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CalibrationTable":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def calibrate_scores(
    scores,
    labels,
    method: str = "f1",
    k: float = 0.2,
    names: Sequence[str] = (),
    split: str = TRAIN_SPLIT,
) -> CalibrationTable:
    """Build a table from N x M training scores and labels.

    Only the training split may be calibrated on; anything else raises.
    Attributes with a single class fall back to 0.5 with a warning.
    """
    if split != TRAIN_SPLIT:
        raise DataError(f"calibration must use the training split, got {split!r}")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape != labels.shape:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} must be matching N x M")
    m = scores.shape[1]
    names = list(names) or [f"attr{i}" for i in range(m)]
    if method == "naive":
        return CalibrationTable.naive(m, names)
    thresholds, tags = [], []
    tag = {"f1": "f1", "f1_pr": "f1_pr", "fpr": f"fpr_at_{k:g}"}[method]
    for j in range(m):
        try:
            curve = roc_curve(scores[:, j], labels[:, j])
        except CalibrationDegenerateError:
            log.warning("attribute %s has a single class in the training split; using 0.5", names[j])
            thresholds.append(0.5)
            tags.append("naive")
            continue
        if method == "f1":
            thresholds.append(f1_calibrate(curve))
        elif method == "f1_pr":
            thresholds.append(f1_calibrate(curve, balance="pr"))
        else:
            thresholds.append(fpr_calibrate(curve, k))
        tags.append(tag)
    return CalibrationTable(np.array(thresholds), tags, names, split)


def apply_thresholds(probabilities, table: CalibrationTable) -> np.ndarray:
    p = np.asarray(probabilities)
    if p.ndim != 2 or p.shape[1] != table.num_attributes:
        raise ShapeError(f"probabilities dims {p.shape} do not match a {table.num_attributes}-attribute table")
    return (p >= table.thresholds[None, :]).astype(np.int8)
