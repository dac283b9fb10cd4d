"""Brute-force reference implementations used as test oracles.

They count directly (loops, python sets, exact fractions) and share no code
with the package beyond the documented threshold rules.
"""

from fractions import Fraction

import numpy as np


def _sweep(scores, labels):
    """(threshold candidates, tp, fp, P, Nn) with an 'accept nothing' candidate last."""
    scores = [float(s) for s in scores]
    labels = [int(v) for v in labels]
    cands = sorted(set(scores)) + [np.inf]
    rows = []
    for t in cands:
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 0)
        rows.append((t, tp, fp))
    return rows, sum(labels), len(labels) - sum(labels)


def _representatives(rows):
    u = [t for t, _, _ in rows[:-1]]
    reps = [u[0]]
    for lo, hi in zip(u[:-1], u[1:]):
        mid = lo + (hi - lo) / 2
        reps.append(mid if mid > lo else hi)
    reps.append(float(np.nextafter(u[-1], np.inf)))
    return reps


def sweep_eer_threshold(scores, labels, balance="roc"):
    """Exhaustive minimum of |TPR - (1 - FPR)| (or |precision - recall|) with the
    documented tie rule: closest to 0.5, then the lowest threshold."""
    rows, pos, neg = _sweep(scores, labels)
    reps = _representatives(rows)
    best = None
    for (t, tp, fp), rep in zip(rows, reps):
        if balance == "roc":
            gap = abs(Fraction(tp, pos) - (1 - Fraction(fp, neg)))
        else:
            if tp + fp == 0:
                continue
            gap = abs(Fraction(tp, tp + fp) - Fraction(tp, pos))
        key = (gap, abs(Fraction(rep) - Fraction(1, 2)), rep)
        if best is None or key < best:
            best = key
    return best[2]


def sweep_fpr_threshold(scores, labels, k):
    """Highest TPR among thresholds with FPR <= k; ties resolved to the smallest threshold."""
    rows, pos, neg = _sweep(scores, labels)
    feasible = [(Fraction(tp, pos), t) for t, tp, fp in rows if Fraction(fp, neg) <= Fraction(k)]
    top = max(r for r, _ in feasible)
    t = min(t for r, t in feasible if r == top)
    return float(np.nextafter(rows[-2][0], np.inf)) if np.isinf(t) else t


def mean_accuracy(labels, preds):
    terms = []
    for j in range(labels.shape[1]):
        y, p = labels[:, j].tolist(), preds[:, j].tolist()
        pos = sum(y)
        neg = len(y) - pos
        if pos == 0 or neg == 0:
            continue
        tp = sum(1 for a, b in zip(y, p) if a == 1 and b == 1)
        tn = sum(1 for a, b in zip(y, p) if a == 0 and b == 0)
        terms.append(0.5 * (tp / pos + tn / neg))
    return sum(terms) / len(terms)


def example_based(labels, preds):
    acc = prec = rec = 0.0
    for y_row, p_row in zip(labels.tolist(), preds.tolist()):
        y = {j for j, v in enumerate(y_row) if v}
        p = {j for j, v in enumerate(p_row) if v}
        both_empty = not y and not p
        acc += 1.0 if both_empty else (len(y & p) / len(y | p))
        prec += (1.0 if both_empty else 0.0) if not p else len(y & p) / len(p)
        rec += (1.0 if both_empty else 0.0) if not y else len(y & p) / len(y)
    n = len(labels)
    acc, prec, rec = acc / n, prec / n, rec / n
    f1 = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    return acc, prec, rec, f1


def subset_accuracy(labels, preds):
    return sum(1 for a, b in zip(labels.tolist(), preds.tolist()) if a == b) / len(labels)


def micro_auc(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    pos, neg = s[y == 1], s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins) / (pos.size * neg.size)
