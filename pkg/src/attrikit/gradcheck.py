"""Central finite-difference checks of tape gradients.

Each check builds a scalar objective ``sum(R * f(inputs))`` with a fixed
random projection ``R``, differentiates it on the tape, and compares against
``(L(x + eps) - L(x - eps)) / (2 eps)`` coordinate by coordinate. The error
of a gradient array is ``||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6)``.

In the whole-network check a coordinate whose +eps or -eps forward pass
flips any ReLU activation pattern is left out: the central difference then
straddles a kink and measures nothing about the backward pass.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from attrikit import ops
from attrikit.losses import compute_sample_weights, total_loss, weighted_bce
from attrikit.network import NetworkConfig, build
from attrikit.tensor import DTYPE, Tape, Tensor, backward

EPS = 1e-3
TOLERANCE = 1e-2


@dataclass
class GradcheckResult:
    name: str
    seed: int
    rel_error: float
    skipped: float = 0.0  # fraction of coordinates excluded for kink crossings

    @property
    def passed(self) -> bool:
        return self.rel_error < TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-6)
    return float(np.linalg.norm(a - n) / scale)


def numeric_gradient(objective: Callable[[], float], array: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central differences of ``objective`` w.r.t. every entry of ``array`` (perturbed in place)."""
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + DTYPE(eps)
        plus = objective()
        flat[i] = orig - DTYPE(eps)
        minus = objective()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * eps)
    return grad


def check_function(name: str, fn: Callable[..., Tensor], inputs: Sequence[Tensor], seed: int) -> GradcheckResult:
    """Compare tape and finite-difference gradients of ``sum(R * fn(*inputs))``."""
    rng = np.random.default_rng([seed, 7])
    with Tape():
        probe = fn(*inputs)
    proj = rng.uniform(-1, 1, probe.dims).astype(DTYPE)

    def scalar():
        return ops.sum(ops.mul(fn(*inputs), Tensor(proj)))

    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = scalar()
    backward(loss, tape)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad.copy()
        numeric = numeric_gradient(lambda: scalar().item(), t.data)
        worst = max(worst, relative_error(analytic, numeric))
    return GradcheckResult(name, seed, worst)


def _uniform(rng, dims, requires_grad=True, avoid_zero=False):
    x = rng.uniform(-1, 1, dims)
    if avoid_zero:
        x = np.where(np.abs(x) < 0.02, 0.5, x)  # keep away from the kink
    return Tensor(x, requires_grad)


def primitive_checks(seed: int) -> list[GradcheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    x, k, b = _uniform(rng, (2, 3, 6, 6)), _uniform(rng, (4, 3, 3, 3)), _uniform(rng, (4,))
    out.append(check_function("conv2d_s2_p1", lambda x, k, b: ops.conv2d(x, k, b, 2, 1), [x, k, b], seed))
    x, k = _uniform(rng, (2, 2, 5, 4)), _uniform(rng, (3, 2, 3, 2))
    out.append(check_function("conv2d_s1_p0", lambda x, k: ops.conv2d(x, k, None, 1, 0), [x, k], seed))

    x = _uniform(rng, (4, 2, 3, 3))
    g, s = Tensor(rng.uniform(0.5, 1.5, 2), True), _uniform(rng, (2,))
    rm, rv = np.zeros(2, DTYPE), np.ones(2, DTYPE)
    out.append(check_function(
        "batch_norm2d_train", lambda x, g, s: ops.batch_norm2d(x, g, s, True, rm.copy(), rv.copy()), [x, g, s], seed
    ))
    rm2, rv2 = rng.uniform(-0.2, 0.2, 2).astype(DTYPE), rng.uniform(0.5, 1.5, 2).astype(DTYPE)
    out.append(check_function(
        "batch_norm2d_eval", lambda x, g, s: ops.batch_norm2d(x, g, s, False, rm2, rv2), [x, g, s], seed
    ))

    x = _uniform(rng, (3, 5), avoid_zero=True)
    out.append(check_function("relu", ops.relu, [x], seed))
    a, b = _uniform(rng, (2, 3, 2, 2)), _uniform(rng, (2, 3, 2, 2))
    out.append(check_function("residual_add", ops.residual_add, [a, b], seed))
    out.append(check_function("mul", ops.mul, [a, b], seed))
    out.append(check_function("global_average_pool", ops.global_average_pool, [_uniform(rng, (2, 3, 4, 5))], seed))
    x, w, b = _uniform(rng, (3, 5)), _uniform(rng, (5, 4)), _uniform(rng, (4,))
    out.append(check_function("affine", ops.affine, [x, w, b], seed))
    out.append(check_function("sigmoid", ops.sigmoid, [_uniform(rng, (4, 3))], seed))
    out.append(check_function("select", lambda x: ops.select(x, 1), [_uniform(rng, (4, 3))], seed))

    logits = Tensor(rng.uniform(-3, 3, (6, 3)), True)
    labels = (rng.random((6, 3)) < 0.4).astype(np.int8)
    labels[0], labels[1] = 1, 0
    weights = compute_sample_weights(labels, 1.0)
    out.append(check_function("weighted_bce", lambda z: weighted_bce(z, labels, weights), [logits], seed))
    out.append(check_function(
        "total_loss", lambda z: total_loss(weighted_bce(z, labels, weights), [0.2, 0.5, 0.3]), [logits], seed
    ))
    return out


def tiny_network_config(head_kind: str = "logistic") -> NetworkConfig:
    return NetworkConfig(
        stem_channels=4, stage_blocks=[1, 1], stage_channels=[4, 8], num_attributes=3,
        head_kind=head_kind, dense_hidden=6, dropout_rate=0.0,
    )


def network_check(seed: int, head_kind: str = "logistic") -> GradcheckResult:
    """Every parameter of a two-stage network under a sigmoid BCE loss (train-mode BN)."""
    rng = np.random.default_rng([seed, 3])
    net = build(tiny_network_config(head_kind), seed)
    for p in net.parameters().values():
        if p.name.endswith(".bias") or p.name.endswith(".shift"):
            p.data = rng.uniform(-0.1, 0.1, p.dims).astype(DTYPE)
    x = rng.uniform(-1, 1, (3, 3, 6, 6)).astype(DTYPE)
    labels = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 0]], dtype=np.int8)
    weights = compute_sample_weights(labels)
    gamma = np.full(3, 1 / 3)

    def loss_fn():
        logits = net.forward(x, training=True)
        return total_loss(weighted_bce(logits, labels, weights), gamma)

    net.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    backward(loss, tape)
    worst, total, dropped = 0.0, 0, 0
    for p in net.parameters().values():
        numeric, keep = kink_free_gradient(lambda: loss_fn().item(), p.data)
        total += keep.size
        dropped += int((~keep).sum())
        if keep.any():
            worst = max(worst, relative_error(p.grad[keep], numeric[keep]))
    return GradcheckResult(f"network_{head_kind}", seed, worst, dropped / max(total, 1))


@contextlib.contextmanager
def _relu_patterns(sink: list):
    """Record the activation mask of every ReLU evaluated inside the block."""
    original = ops.relu

    def watched(x):
        sink.append(x.data > 0)
        return original(x)

    ops.relu = watched
    try:
        yield
    finally:
        ops.relu = original


def _patterns(objective) -> tuple[float, list]:
    sink: list = []
    with _relu_patterns(sink):
        value = objective()
    return value, sink


def kink_free_gradient(objective: Callable[[], float], array: np.ndarray, eps: float = EPS):
    """Central differences plus a mask of coordinates whose probes keep every ReLU pattern."""
    _, base = _patterns(objective)
    grad = np.zeros(array.shape, dtype=np.float64)
    keep = np.ones(array.shape, dtype=bool)
    flat, gflat, kflat = array.reshape(-1), grad.reshape(-1), keep.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + DTYPE(eps)
        plus, pp = _patterns(objective)
        flat[i] = orig - DTYPE(eps)
        minus, pm = _patterns(objective)
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * eps)
        kflat[i] = all(np.array_equal(a, b) and np.array_equal(a, c) for a, b, c in zip(base, pp, pm))
    return grad, keep


def run_suite(seeds: Sequence[int] = range(20)) -> list[GradcheckResult]:
    results = []
    for seed in seeds:
        results.extend(primitive_checks(seed))
        results.append(network_check(seed))
    results.append(network_check(0, "dense"))
    return results
