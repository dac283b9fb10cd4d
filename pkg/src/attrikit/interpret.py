"""GradCAM heatmaps for individual attributes.

For attribute m the gradient of its pre-sigmoid logit with respect to the
final-stage feature maps ``A`` (C x h x w) gives channel weights
``alpha_k = mean_{y,x} dlogit/dA_k``; the map is ``relu(sum_k alpha_k A_k)``
divided by its maximum (left all-zero when the maximum is 0) and then
bilinearly upsampled to the input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from attrikit import ops
from attrikit.data.imageio import write_image
from attrikit.data.transforms import resize_bilinear
from attrikit.errors import ShapeError
from attrikit.network import Network
from attrikit.tensor import Tape, Tensor, backward

# Colormap anchors (value -> RGB), linearly interpolated: blue, cyan, green, yellow, red.
COLORMAP = np.array(
    [[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]],
    dtype=np.float32,
)


@dataclass
class Heatmap:
    values: np.ndarray  # feature-map resolution, in [0, 1]
    upsampled: np.ndarray  # input resolution, in [0, 1]
    attribute: int
    probability: float

    def mass_fraction(self, rows: slice) -> float:
        total = float(self.upsampled.sum())
        if total == 0:
            return 0.0
        return float(self.upsampled[rows].sum()) / total

    def lower_half_fraction(self) -> float:
        h = self.upsampled.shape[0]
        return self.mass_fraction(slice(h // 2, None))

    def spread(self) -> float:
        """Entropy (nats) of the normalized heatmap mass; larger means more diffuse."""
        total = self.upsampled.sum()
        if total == 0:
            return 0.0
        p = self.upsampled.ravel() / total
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())


def gradcam_batch(net: Network, batch, attribute: int) -> list[Heatmap]:
    """Heatmaps for every image of an NCHW batch (eval mode).

    Parameters and running statistics are left untouched and any existing
    parameter gradients are restored afterwards.
    """
    m = net.config.num_attributes
    if not 0 <= attribute < m:
        raise ShapeError(f"attribute index {attribute} out of range for {m} attributes")
    x = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float32)
    if x.ndim != 4:
        raise ShapeError(f"expected an NCHW batch, got dims {x.shape}")
    params = net.parameters()
    saved = {k: p.grad for k, p in params.items()}
    try:
        with Tape() as tape:
            logits = net.forward(x, training=False, retain_features=True)
            # eval-mode samples are independent, so one backward gives per-sample gradients
            target = ops.sum(ops.select(logits, attribute))
        feats = net.features
        feats.grad = None
        backward(target, tape)
        grads = feats.grad if feats.grad is not None else np.zeros_like(feats.data)
        acts = feats.data
    finally:
        for k, p in params.items():
            p.grad = saved[k]
        net.features = None
    probs = ops.sigmoid_array(logits.data[:, attribute])
    alpha = grads.mean(axis=(2, 3))
    cams = np.maximum(np.einsum("nc,nchw->nhw", alpha, acts), 0)
    out = []
    for i in range(x.shape[0]):
        cam = cams[i]
        peak = cam.max()
        cam = cam / peak if peak > 0 else np.zeros_like(cam)
        up = np.clip(resize_bilinear(cam, x.shape[2], x.shape[3]), 0, 1)
        out.append(Heatmap(cam.astype(np.float32), up, attribute, float(probs[i])))
    return out


def gradcam(net: Network, image, attribute: int) -> Heatmap:
    """Heatmap for a single CHW (or 1xCHW) image."""
    x = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[0] != 1:
        raise ShapeError(f"gradcam expects one image, got dims {x.shape}")
    return gradcam_batch(net, x, attribute)[0]


def colormap(values: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.float32), 0, 1) * (len(COLORMAP) - 1)
    lo = np.floor(v).astype(int)
    hi = np.minimum(lo + 1, len(COLORMAP) - 1)
    f = (v - lo)[..., None]
    return COLORMAP[lo] * (1 - f) + COLORMAP[hi] * f


def overlay(image, heatmap, alpha: float = 0.5) -> np.ndarray:
    """Blend the colormapped heatmap (HxW) over an HxWx3 image in [0, 1]."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    img = np.asarray(image, dtype=np.float32)
    heat = heatmap.upsampled if isinstance(heatmap, Heatmap) else np.asarray(heatmap, dtype=np.float32)
    if img.shape[:2] != heat.shape:
        raise ShapeError(f"image {img.shape[:2]} and heatmap {heat.shape} sizes differ")
    return (1 - alpha) * img + alpha * colormap(heat)


def save_overlay(image, heatmap: Heatmap, path, alpha: float = 0.5) -> None:
    write_image(np.clip(overlay(image, heatmap, alpha), 0, 1), path)
