"""Multi-label evaluation: label-based mA, example-based set metrics, micro AUC.

Empty-set conventions for example-based metrics (per sample, with Y the
true attribute set and P the predicted set):

* accuracy ``|Y & P| / |Y | P|`` is 1 when both sets are empty;
* precision ``|Y & P| / |P|`` is 1 if both are empty, 0 if only P is empty;
* recall ``|Y & P| / |Y|`` is 1 if both are empty, 0 if only Y is empty.

F1 is the harmonic mean of the averaged precision and recall (0 when both
are 0). "Acc" is the Jaccard accuracy; the all-attributes-correct rate is
reported separately as subset accuracy.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from attrikit.errors import CalibrationDegenerateError, DataError, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp


def _binary_pair(labels, predictions):
    y = np.asarray(labels)
    p = np.asarray(predictions)
    if y.shape != p.shape or y.ndim != 2:
        raise ShapeError(f"labels {y.shape} and predictions {p.shape} must be matching N x M")
    for arr in (y, p):
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise DataError("labels and predictions must be 0 or 1")
    return y.astype(bool), p.astype(bool)


def confusion_counts(labels, predictions) -> list[ConfusionCounts]:
    y, p = _binary_pair(labels, predictions)
    tp = (y & p).sum(axis=0)
    fp = (~y & p).sum(axis=0)
    tn = (~y & ~p).sum(axis=0)
    fn = (y & ~p).sum(axis=0)
    return [ConfusionCounts(int(a), int(b), int(c), int(d)) for a, b, c, d in zip(tp, fp, tn, fn)]


def mean_accuracy(counts: list[ConfusionCounts]) -> float:
    """Mean over attributes of (TPR + TNR) / 2, skipping single-class attributes."""
    terms = []
    for m, c in enumerate(counts):
        if c.positives == 0 or c.negatives == 0:
            log.warning("attribute %d has a single class; excluded from mA", m)
            continue
        terms.append(0.5 * (c.tp / c.positives + c.tn / c.negatives))
    if not terms:
        raise DataError("every attribute is single-class; mA is undefined")
    return float(np.mean(terms))


def example_based(labels, predictions) -> tuple[float, float, float, float]:
    """(accuracy, precision, recall, F1) averaged over samples."""
    y, p = _binary_pair(labels, predictions)
    inter = (y & p).sum(axis=1)
    union = (y | p).sum(axis=1)
    ny = y.sum(axis=1)
    np_ = p.sum(axis=1)

    def ratio(num, den, both_empty):
        out = np.where(both_empty, 1.0, 0.0)
        return np.divide(num, den, out=out, where=den > 0)

    empty = union == 0
    acc = float(ratio(inter, union, empty).mean())
    prec = float(ratio(inter, np_, empty).mean())
    rec = float(ratio(inter, ny, empty).mean())
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return acc, prec, rec, f1


def subset_accuracy(labels, predictions) -> float:
    y, p = _binary_pair(labels, predictions)
    return float((y == p).all(axis=1).mean())


def micro_auc(scores, labels) -> float:
    """ROC AUC over all flattened (score, label) pairs; ties count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ShapeError(f"{s.size} scores but {y.size} labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise CalibrationDegenerateError("micro AUC needs both classes among the pooled labels")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsReport:
    mA: float
    example_accuracy: float
    example_precision: float
    example_recall: float
    example_f1: float
    micro_auc: float
    subset_accuracy: float
    per_attribute: list[dict] = field(default_factory=list)

    def summary(self) -> dict[str, float]:
        d = asdict(self)
        d.pop("per_attribute")
        return d

    def to_text(self) -> str:
        """Flat ``key=value`` block, a blank line, then a tab-separated table."""
        lines = [f"{k}={v:.6f}" for k, v in self.summary().items()]
        lines.append("")
        lines.append("attribute\ttp\tfp\ttn\tfn\ttpr\ttnr\tthreshold")
        for row in self.per_attribute:
            lines.append(
                "{name}\t{tp}\t{fp}\t{tn}\t{fn}\t{tpr:.6f}\t{tnr:.6f}\t{threshold:.6f}".format(**row)
            )
        return "\n".join(lines) + "\n"


def evaluate_predictions(labels, probabilities, predictions, names=None, thresholds=None) -> MetricsReport:
    labels = np.asarray(labels)
    counts = confusion_counts(labels, predictions)
    acc, prec, rec, f1 = example_based(labels, predictions)
    m = labels.shape[1]
    names = list(names) if names is not None else [f"attr{i}" for i in range(m)]
    thresholds = np.full(m, np.nan) if thresholds is None else np.asarray(thresholds)
    rows = []
    for j, c in enumerate(counts):
        rows.append(
            dict(
                name=names[j], tp=c.tp, fp=c.fp, tn=c.tn, fn=c.fn,
                tpr=c.tp / c.positives if c.positives else float("nan"),
                tnr=c.tn / c.negatives if c.negatives else float("nan"),
                threshold=float(thresholds[j]),
            )
        )
    try:
        auc = micro_auc(probabilities, labels)
    except CalibrationDegenerateError:
        auc = float("nan")
    return MetricsReport(
        mA=mean_accuracy(counts),
        example_accuracy=acc,
        example_precision=prec,
        example_recall=rec,
        example_f1=f1,
        micro_auc=auc,
        subset_accuracy=subset_accuracy(labels, predictions),
        per_attribute=rows,
    )
