"""Turning split views into NCHW float32 batches.

Pixels are RGB scaled to [0, 1]; with mean subtraction enabled the dataset
mean pixel is then subtracted per channel. Every batch draws its randomness
from ``default_rng([seed, epoch, batch_index])``, so results do not depend
on how many loader threads produced them.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Iterator, Sequence

import numpy as np

from attrikit.data.manifest import SplitView
from attrikit.data.transforms import (
    AugmentationConfig,
    augment,
    color_jitter,
    resize_aspect_preserving,
    resize_fixed,
)
from attrikit.errors import DataError


def _as_float(img: np.ndarray) -> np.ndarray:
    if img.dtype == np.uint8:
        return img.astype(np.float32) / 255.0
    return np.asarray(img, dtype=np.float32)


def make_batch(
    images: Sequence[np.ndarray],
    labels,
    config: AugmentationConfig,
    rng: np.random.Generator,
    training: bool,
    mean=None,
):
    """Return ``(x, y)`` with x of dims N x 3 x S x S and y of dims N x M."""
    if len(images) == 0:
        raise DataError("cannot build a batch from zero samples")
    mean = np.full(3, 0.5, dtype=np.float32) if mean is None else np.asarray(mean, dtype=np.float32)
    letterbox = config.resize_policy == "aspect_preserving"
    side = (int(rng.choice(config.long_sides)) if training else config.eval_long_side) if letterbox else 0
    out = []
    for img in images:
        # colours are jittered before resizing so letterbox padding stays exactly at the mean
        im = color_jitter(_as_float(img), config, rng) if training else _as_float(img)
        if letterbox:
            im = resize_aspect_preserving(im, side, fill=mean)
        else:
            im = resize_fixed(im, config.resize, config.crop, random_crop=training, rng=rng)
        if training:
            im = augment(im, config, rng, mean, jitter=False)
        elif config.mean_subtraction:
            im = im - mean
        out.append(im)
    x = np.stack(out).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(x, dtype=np.float32), np.asarray(labels, dtype=np.float32)


def iterate_batches(
    view: SplitView,
    batch_size: int,
    config: AugmentationConfig,
    seed: int = 0,
    epoch: int = 0,
    training: bool = True,
    shuffle: bool = True,
    workers: int = 0,
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield ``(x, y, indices)`` in a seeded order; the last batch may be short."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    n = len(view)
    if n == 0:
        raise DataError(f"split {view.name!r} is empty")
    images = view.images()
    labels = view.labels()
    mean = view.manifest.mean_pixel
    order = np.random.default_rng([seed, epoch]).permutation(n) if shuffle else np.arange(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]

    def build(b):
        idx = chunks[b]
        rng = np.random.default_rng([seed, epoch, b])
        x, y = make_batch([images[i] for i in idx], labels[idx], config, rng, training, mean)
        return x, y, idx

    if workers and workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(build, range(len(chunks)))
    else:
        for b in range(len(chunks)):
            yield build(b)
