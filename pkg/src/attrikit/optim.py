"""SGD with Nesterov momentum and L2 weight decay.

Update rule, per parameter ``w`` with gradient ``g``::

    g_eff = g + weight_decay * w
    v     = momentum * v - lr * g_eff
    w     = w + momentum * v - lr * g_eff

This is the "look-ahead" form used by most deep learning frameworks; with
``momentum == 0`` it reduces to plain SGD.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from attrikit.errors import ConfigError, ShapeError
from attrikit.tensor import DTYPE, Tensor


@dataclass
class OptimizerState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be nonnegative, got {self.weight_decay}")


def sgd_nesterov_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: OptimizerState,
    names: Sequence[str] | None = None,
) -> None:
    """Apply one in-place update to ``params``.

    Velocity buffers are keyed by ``names`` (defaults to positional keys) and
    created lazily as zeros. A ``None`` gradient is treated as zero.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} gradients")
    keys = list(names) if names is not None else [str(i) for i in range(len(params))]
    lr = DTYPE(state.lr)
    mu = DTYPE(state.momentum)
    wd = DTYPE(state.weight_decay)
    for key, p, g in zip(keys, params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.dims:
            raise ShapeError(f"gradient dims {g.shape} != parameter dims {p.dims} for {key}")
        g_eff = g + wd * p.data if wd else g
        v = state.velocity.get(key)
        if v is None:
            v = np.zeros_like(p.data)
        elif v.shape != p.dims:
            raise ShapeError(f"velocity dims {v.shape} != parameter dims {p.dims} for {key}")
        v = mu * v - lr * g_eff
        state.velocity[key] = v
        p.data = (p.data + mu * v - lr * g_eff).astype(DTYPE, copy=False)
