from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from attrikit.errors import CalibrationDegenerateError, DataError
from attrikit.metrics import (
    confusion_counts,
    evaluate_predictions,
    example_based,
    mean_accuracy,
    micro_auc,
    subset_accuracy,
)


def binary(n, m):
    return arrays(np.int8, (n, m), elements=st.integers(0, 1))


@st.composite
def label_pred_pairs(draw, max_n=50, max_m=10):
    n = draw(st.integers(1, max_n))
    m = draw(st.integers(1, max_m))
    return draw(binary(n, m)), draw(binary(n, m))


def test_ma_perfect_and_always_positive():
    y = np.array([[1, 0], [0, 1], [1, 1], [0, 0]])
    assert mean_accuracy(confusion_counts(y, y)) == 1.0
    assert mean_accuracy(confusion_counts(y, np.ones_like(y))) == 0.5


def test_ma_hand_computed_5x3():
    y = np.array([[1, 0, 1], [0, 1, 1], [1, 1, 0], [0, 0, 0], [1, 0, 1]])
    p = np.array([[1, 1, 1], [0, 1, 0], [0, 1, 0], [1, 0, 0], [1, 0, 1]])
    # attr0: TP 2/3, TN 1/2; attr1: TP 2/2, TN 2/3; attr2: TP 2/3, TN 2/2
    expected = (0.5 * (2 / 3 + 1 / 2) + 0.5 * (1 + 2 / 3) + 0.5 * (2 / 3 + 1)) / 3
    assert mean_accuracy(confusion_counts(y, p)) == pytest.approx(expected, abs=1e-12)


def test_ma_majority_predictor_is_half():
    y = np.array([[1], [0], [0], [0]])
    assert mean_accuracy(confusion_counts(y, np.zeros_like(y))) == 0.5


def test_ma_skips_single_class_and_fails_when_all_degenerate():
    y = np.array([[1, 1], [0, 1]])
    assert mean_accuracy(confusion_counts(y, y)) == 1.0
    with pytest.raises(DataError):
        mean_accuracy(confusion_counts(np.ones((2, 2)), np.ones((2, 2))))


def test_counts_sum_to_n():
    rng = np.random.default_rng(0)
    y, p = rng.integers(0, 2, (9, 4)), rng.integers(0, 2, (9, 4))
    for c in confusion_counts(y, p):
        assert c.tp + c.fp + c.tn + c.fn == 9


def test_example_based_cases():
    y = np.array([[1, 0, 1], [0, 1, 1]])
    assert example_based(y, y) == (1.0, 1.0, 1.0, 1.0)
    acc, prec, rec, f1 = example_based(y, np.array([[1, 0, 0], [0, 1, 1]]))
    assert (acc, prec, rec) == (0.75, 1.0, 0.75)
    assert f1 == pytest.approx(2 * 0.75 / 1.75)
    assert example_based(y, 1 - y)[:3] == (0.0, 0.0, 0.0)


def test_example_based_empty_set_conventions():
    assert example_based(np.zeros((1, 3)), np.zeros((1, 3))) == (1.0, 1.0, 1.0, 1.0)
    acc, prec, rec, _ = example_based(np.array([[1, 0]]), np.array([[0, 0]]))
    assert (acc, prec, rec) == (0.0, 0.0, 0.0)


def test_subset_accuracy_cases():
    y = np.array([[1, 0], [0, 1]])
    assert subset_accuracy(y, y) == 1.0
    assert subset_accuracy(y, np.array([[1, 0], [1, 1]])) == 0.5


def test_micro_auc_cases():
    assert micro_auc([[0.9, 0.8], [0.2, 0.1]], [[1, 1], [0, 0]]) == 1.0
    rng = np.random.default_rng(0)
    assert abs(micro_auc(rng.random((500, 40)), rng.integers(0, 2, (500, 40))) - 0.5) < 0.05
    # 2 positives x 2 negatives: pairs (.7>.4), (.7>.6), (.5>.4), (.5<.6) -> 3/4
    assert micro_auc([[0.7, 0.4], [0.5, 0.6]], [[1, 0], [1, 0]]) == 0.75
    with pytest.raises(CalibrationDegenerateError):
        micro_auc([[0.2, 0.3]], [[1, 1]])


def test_invalid_labels_rejected():
    with pytest.raises(DataError):
        example_based(np.array([[2]]), np.array([[1]]))


@settings(max_examples=150, deadline=None)
@given(label_pred_pairs())
def test_metrics_match_brute_force(pair):
    y, p = pair
    for got, want in zip(example_based(y, p), oracles.example_based(y, p)):
        assert got == pytest.approx(want, abs=1e-9)
    assert subset_accuracy(y, p) == pytest.approx(oracles.subset_accuracy(y, p), abs=1e-9)
    counts = confusion_counts(y, p)
    if any(c.positives and c.negatives for c in counts):
        assert mean_accuracy(counts) == pytest.approx(oracles.mean_accuracy(y, p), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([1, 2, 4, 8, 16, 32]), st.integers(1, 2), st.data())
def test_example_based_exact_fractions_agree(n, m, data):
    # with at most two attributes and N a power of two every ratio and the
    # mean are exact binary fractions, so the two paths must agree bit for bit
    y, p = data.draw(binary(n, m)), data.draw(binary(n, m))
    acc = Fraction(0)
    for yr, pr in zip(y.astype(bool), p.astype(bool)):
        union = int((yr | pr).sum())
        acc += Fraction(int((yr & pr).sum()), union) if union else 1
    assert example_based(y, p)[0] == float(acc / len(y))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**16), st.integers(2, 40), st.integers(1, 6))
def test_micro_auc_brute_force_and_monotone_invariance(seed, n, m):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, (n, m))
    y.flat[0], y.flat[1] = 1, 0
    s = np.round(rng.random((n, m)), 1)  # coarse grid forces ties
    assert micro_auc(s, y) == pytest.approx(oracles.micro_auc(s, y), abs=1e-9)
    assert micro_auc(np.exp(3 * s) - 7, y) == micro_auc(s, y)


@settings(max_examples=60, deadline=None)
@given(label_pred_pairs())
def test_metrics_lie_in_unit_interval(pair):
    y, p = pair
    for v in example_based(y, p) + (subset_accuracy(y, p),):
        assert 0.0 <= v <= 1.0


def test_report_text_and_f1_invariant():
    rng = np.random.default_rng(4)
    y = rng.integers(0, 2, (30, 3))
    probs = rng.random((30, 3))
    report = evaluate_predictions(y, probs, (probs >= 0.5).astype(int), ["a", "b", "c"], [0.5] * 3)
    p, r = report.example_precision, report.example_recall
    assert report.example_f1 == pytest.approx(2 * p * r / (p + r))
    text = report.to_text()
    assert text.startswith("mA=") and "a\t" in text and "micro_auc=" in text
