"""Weighted multi-label sigmoid cross-entropy with DeepMAR sample weights.

For attribute m with training positive ratio p_m and control parameter
sigma, positives are weighted ``exp((1 - p_m) / sigma**2)`` and negatives
``exp(p_m / sigma**2)``; rare positives therefore count more. The total loss
is ``sum_m gamma_m * loss_m`` with gamma defaulting to 1/M.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from attrikit import ops
from attrikit.errors import ConfigError, DataError, ShapeError
from attrikit.tensor import Tensor

WEIGHTING_MODES = ("deepmar", "none")


@dataclass(frozen=True)
class AttributeWeights:
    positive_weight: np.ndarray
    negative_weight: np.ndarray
    positive_ratio: np.ndarray
    sigma: float

    @property
    def num_attributes(self) -> int:
        return len(self.positive_weight)

    def per_sample(self, labels: np.ndarray) -> np.ndarray:
        """Weight matrix for a label matrix: w+ where y == 1, w- elsewhere."""
        labels = np.asarray(labels)
        if labels.ndim != 2 or labels.shape[1] != self.num_attributes:
            raise ShapeError(f"labels dims {labels.shape} incompatible with {self.num_attributes} attributes")
        return np.where(labels == 1, self.positive_weight[None, :], self.negative_weight[None, :])


@dataclass
class LossConfig:
    gamma: Optional[Sequence[float]] = None  # None -> 1/M for every attribute
    weighting: str = "deepmar"
    sigma: float = 1.0

    def __post_init__(self):
        if self.weighting not in WEIGHTING_MODES:
            raise ConfigError(f"weighting must be one of {WEIGHTING_MODES}, got {self.weighting!r}")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.gamma is not None and any(g <= 0 for g in self.gamma):
            raise ConfigError("every gamma must be positive")

    def gammas(self, num_attributes: int) -> np.ndarray:
        if self.gamma is None:
            return np.full(num_attributes, 1.0 / num_attributes)
        g = np.asarray(self.gamma, dtype=np.float64)
        if g.shape != (num_attributes,):
            raise ShapeError(f"{len(g)} gamma values for {num_attributes} attributes")
        return g


def _check_binary(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and ((labels != 0) & (labels != 1)).any():
        raise DataError("labels must be 0 or 1")
    return labels


def compute_sample_weights(label_matrix, sigma: float = 1.0) -> AttributeWeights:
    labels = _check_binary(label_matrix)
    if labels.ndim != 2 or labels.shape[0] < 1 or labels.shape[1] < 1:
        raise DataError(f"need a non-empty N x M label matrix, got dims {labels.shape}")
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    p = labels.sum(axis=0, dtype=np.float64) / labels.shape[0]
    s2 = float(sigma) ** 2
    return AttributeWeights(
        positive_weight=np.exp((1.0 - p) / s2),
        negative_weight=np.exp(p / s2),
        positive_ratio=p,
        sigma=float(sigma),
    )


def weighted_bce(logits: Tensor, labels, weights: Optional[AttributeWeights] = None) -> Tensor:
    """Per-attribute losses (length-M tensor), differentiable in ``logits``."""
    labels = _check_binary(labels)
    if labels.shape != logits.dims:
        raise ShapeError(f"labels dims {labels.shape} != logits dims {logits.dims}")
    w = None if weights is None else weights.per_sample(labels)
    return ops.bce_with_logits(logits, labels, w)


def total_loss(per_attribute: Tensor, gamma) -> Tensor:
    g = np.asarray(gamma, dtype=np.float64)
    if g.shape != per_attribute.dims:
        raise ShapeError(f"{g.shape} gamma values for per-attribute losses of dims {per_attribute.dims}")
    return ops.dot(per_attribute, g)
