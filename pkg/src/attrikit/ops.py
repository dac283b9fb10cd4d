"""Differentiable primitives used by the residual network and its loss.

Every function takes and returns :class:`~attrikit.tensor.Tensor` objects and
records itself on the active tape. Spatial tensors are NCHW.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from attrikit.errors import NumericError, ShapeError
from attrikit.tensor import DTYPE, Tensor, record

_SIG_LO = np.finfo(DTYPE).smallest_subnormal
_SIG_HI = np.nextafter(DTYPE(1), DTYPE(0))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation via im2col.

    Output dims are ``N x O x ((H+2p-Kh)//s + 1) x ((W+2p-Kw)//s + 1)``.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIKhKw kernel, got {x.dims} and {kernel.dims}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    n, c, h, w = x.dims
    o, ci, kh, kw = kernel.dims
    if c != ci:
        raise ShapeError(f"conv2d input has {c} channels but kernel expects {ci}")
    if bias is not None and bias.dims != (o,):
        raise ShapeError(f"conv2d bias dims {bias.dims} != ({o},)")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d padded input {hp}x{wp} is smaller than kernel {kh}x{kw}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = x.data
    if padding:
        xp = np.zeros((n, c, hp, wp), dtype=DTYPE)
        xp[:, :, padding:padding + h, padding:padding + w] = x.data
    ye, xe = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    # per-sample column blocks: (n, c, ky, kx, ho, wo) -> (n, c*kh*kw, ho*wo)
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + ye:stride, j:j + xe:stride]
    cols = cols.reshape(n, c * kh * kw, ho * wo)
    w2 = kernel.data.reshape(o, c * kh * kw)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, o, ho, wo)

    def grad_fn(g):
        g3 = g.reshape(n, o, ho * wo)
        gk = gb = gx = None
        if kernel.requires_grad:
            acc = np.zeros((c * kh * kw, o), dtype=DTYPE)
            for s in range(n):
                acc += cols[s] @ g3[s].T
            gk = np.ascontiguousarray(acc.T).reshape(o, c, kh, kw)
        if bias is not None and bias.requires_grad:
            gb = g3.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g3).reshape(n, c, kh, kw, ho, wo)
            gxp = np.zeros((n, c, hp, wp), dtype=DTYPE)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + ye:stride, j:j + xe:stride] += dcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d", inputs, out, grad_fn)


def batch_norm2d(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    training: bool,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (N, H, W).

    In training mode the batch mean and biased variance normalize the input
    and the running buffers are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``. In eval mode
    the running buffers are used and left untouched.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm2d expects NCHW input, got {x.dims}")
    n, c, h, w = x.dims
    if scale.dims != (c,) or shift.dims != (c,):
        raise ShapeError(f"batch_norm2d scale/shift dims must be ({c},), got {scale.dims}, {shift.dims}")
    count = n * h * w
    x3 = x.data.reshape(n, c, h * w)
    if training:
        if count < 2:
            raise NumericError("batch_norm2d in train mode needs N*H*W >= 2 (variance is degenerate)")
        mean = (x3.sum(axis=2, dtype=np.float64).sum(axis=0) / count).astype(DTYPE)
        centered = x.data - mean[None, :, None, None]
        c3 = centered.reshape(n, c, h * w)
        var = (np.einsum("ncp,ncp->c", c3, c3, dtype=np.float64) / count).astype(DTYPE)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean = running_mean.astype(DTYPE)
        var = running_var.astype(DTYPE)
        centered = x.data - mean[None, :, None, None]
    inv_std = (1.0 / np.sqrt(var.astype(np.float64) + eps)).astype(DTYPE)
    a = scale.data * inv_std
    out = centered * a[None, :, None, None]
    out += shift.data[None, :, None, None]

    def grad_fn(g):
        g3 = g.reshape(n, c, h * w)
        c3 = centered.reshape(n, c, h * w)
        gshift = g3.sum(axis=2).sum(axis=0)
        gc = np.einsum("ncp,ncp->c", g3, c3)  # sum(g * centered)
        gscale = gc * inv_std
        gx = None
        if x.requires_grad:
            gx = g * a[None, :, None, None]
            if training:
                gx -= centered * (a * inv_std * gscale / count)[None, :, None, None]
                gx -= (a * gshift / count)[None, :, None, None]
        return gx, gscale, gshift

    return record("batch_norm2d", (x, scale, shift), out, grad_fn)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    out = np.maximum(x.data, DTYPE(0))
    mask = out > 0

    def grad_fn(g):
        return (g * mask,)

    return record("relu", (x,), out, grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two tensors with identical dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.dims != b.dims:
        raise ShapeError(f"add needs identical dims, got {a.dims} and {b.dims}")

    def grad_fn(g):
        return g, g

    return record("add", (a, b), a.data + b.data, grad_fn)


residual_add = add


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two tensors with identical dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.dims != b.dims:
        raise ShapeError(f"mul needs identical dims, got {a.dims} and {b.dims}")

    def grad_fn(g):
        return g * b.data, g * a.data

    return record("mul", (a, b), a.data * b.data, grad_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    f = DTYPE(factor)

    def grad_fn(g):
        return (g * f,)

    return record("scale", (x,), x.data * f, grad_fn)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    """Sum of all elements as a scalar tensor."""
    dims = x.dims

    def grad_fn(g):
        return (np.broadcast_to(g, dims).astype(DTYPE),)

    return record("sum", (x,), np.asarray(x.data.sum(dtype=np.float64), dtype=DTYPE), grad_fn)


def dot(x: Tensor, coeffs) -> Tensor:
    """Scalar ``sum_i coeffs[i] * x[i]`` for a constant coefficient array."""
    c = np.asarray(coeffs, dtype=DTYPE)
    if c.shape != x.dims:
        raise ShapeError(f"dot coefficients dims {c.shape} != tensor dims {x.dims}")

    def grad_fn(g):
        return (g * c,)

    return record("dot", (x,), np.asarray((x.data.astype(np.float64) * c).sum(), dtype=DTYPE), grad_fn)


def reshape(x: Tensor, dims) -> Tensor:
    src = x.dims

    def grad_fn(g):
        return (g.reshape(src),)

    return record("reshape", (x,), x.data.reshape(dims), grad_fn)


def select(x: Tensor, column: int) -> Tensor:
    """Column ``column`` of an N x M tensor, as an N-vector."""
    if x.data.ndim != 2 or not 0 <= column < x.dims[1]:
        raise ShapeError(f"select column {column} out of range for dims {x.dims}")

    def grad_fn(g):
        full = np.zeros(x.dims, dtype=DTYPE)
        full[:, column] = g
        return (full,)

    return record("select", (x,), x.data[:, column].copy(), grad_fn)


def global_average_pool(x: Tensor) -> Tensor:
    """Mean over H x W of each feature map: NCHW -> NC."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_average_pool expects NCHW input, got {x.dims}")
    n, c, h, w = x.dims
    if h < 1 or w < 1:
        raise ShapeError("global_average_pool needs H, W >= 1")
    inv = DTYPE(1.0 / (h * w))

    def grad_fn(g):
        return (np.broadcast_to((g * inv)[:, :, None, None], (n, c, h, w)).copy(),)

    return record("global_average_pool", (x,), x.data.mean(axis=(2, 3), dtype=np.float64).astype(DTYPE), grad_fn)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for x of dims N x F and weight F x M."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.dims[1] != weight.dims[0]:
        raise ShapeError(f"affine inner dims disagree: {x.dims} @ {weight.dims}")
    if bias.dims != (weight.dims[1],):
        raise ShapeError(f"affine bias dims {bias.dims} != ({weight.dims[1]},)")

    def grad_fn(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return record("affine", (x, weight, bias), x.data @ weight.data + bias.data, grad_fn)


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, clamped into the open interval (0, 1)."""
    x64 = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x64))
    p = np.where(x64 >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(p.astype(DTYPE), _SIG_LO, _SIG_HI)


def sigmoid(x: Tensor) -> Tensor:
    p = sigmoid_array(x.data)

    def grad_fn(g):
        return (g * p * (1 - p),)

    return record("sigmoid", (x,), p, grad_fn)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``rate == 0``."""
    if not training or rate == 0:
        return x
    keep = (rng.random(x.dims) >= rate).astype(DTYPE) / DTYPE(1 - rate)

    def grad_fn(g):
        return (g * keep,)

    return record("dropout", (x,), x.data * keep, grad_fn)


def bce_with_logits(logits: Tensor, labels: np.ndarray, weights: Optional[np.ndarray] = None) -> Tensor:
    """Per-column mean of weighted sigmoid binary cross-entropy.

    Returns an M-vector whose entry m is
    ``-(1/N) sum_i w_im [y log p + (1-y) log(1-p)]`` evaluated as
    ``w * (max(x, 0) - x*y + log1p(exp(-|x|)))`` so that saturated logits
    never take the log of a rounded-to-zero probability.
    """
    x = logits.data
    if x.ndim != 2:
        raise ShapeError(f"bce_with_logits expects N x M logits, got {logits.dims}")
    y = np.asarray(labels, dtype=DTYPE)
    if y.shape != x.shape:
        raise ShapeError(f"labels dims {y.shape} != logits dims {x.shape}")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=DTYPE)
    if w.shape != x.shape:
        raise ShapeError(f"weights dims {w.shape} != logits dims {x.shape}")
    n = x.shape[0]
    x64 = x.astype(np.float64)
    per = w * (np.maximum(x64, 0) - x64 * y + np.log1p(np.exp(-np.abs(x64))))
    out = (per.sum(axis=0) / n).astype(DTYPE)
    p = sigmoid_array(x)

    def grad_fn(g):
        return (g[None, :] * w * (p - y) / DTYPE(n),)

    return record("bce_with_logits", (logits,), out, grad_fn)
