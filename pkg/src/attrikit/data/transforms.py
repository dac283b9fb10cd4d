"""Resizing and online augmentation for HxWxC float images."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from attrikit.errors import ConfigError, DataError

RESIZE_POLICIES = ("fixed", "aspect_preserving")


@dataclass
class AugmentationConfig:
    flip_prob: float = 0.5
    jitter: bool = True
    jitter_scale: float = 0.2  # multiplicative factor drawn from [1 - a, 1 + a] per channel
    jitter_shift: float = 0.05  # additive offset drawn from [-b, b] per channel
    rotate: bool = False
    rotation_degrees: float = 10.0
    resize_policy: str = "aspect_preserving"
    resize: int = 64  # fixed policy: square resize ...
    crop: int = 56  # ... then crop
    long_sides: tuple[int, ...] = (56, 64, 72, 80)  # aspect policy: sampled per training batch
    eval_long_side: int = 64
    mean_subtraction: bool = True

    def __post_init__(self):
        self.long_sides = tuple(int(s) for s in self.long_sides)
        if not 0 <= self.flip_prob <= 1:
            raise ConfigError("flip_prob must lie in [0, 1]")
        if self.jitter_scale < 0 or self.jitter_shift < 0 or self.rotation_degrees < 0:
            raise ConfigError("jitter and rotation amplitudes must be nonnegative")
        if self.resize_policy not in RESIZE_POLICIES:
            raise ConfigError(f"resize_policy must be one of {RESIZE_POLICIES}")
        if not self.long_sides:
            raise ConfigError("long_sides must be nonempty")
        if self.crop > self.resize:
            raise ConfigError(f"crop {self.crop} exceeds resize {self.resize}")

    @classmethod
    def disabled(cls, **kw) -> "AugmentationConfig":
        base = dict(flip_prob=0.0, jitter=False, rotate=False)
        base.update(kw)
        return cls(**base)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centres and edge clamping."""
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[:2]
    if h == 0 or w == 0:
        raise DataError("cannot resize an empty image")
    if (h, w) == (out_h, out_w):
        return image.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo).astype(np.float32)

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    extra = (None,) * (image.ndim - 2)
    fy = fy[(slice(None), None) + extra]
    fx = fx[(None, slice(None)) + extra]
    top = image[y0][:, x0] * (1 - fx) + image[y0][:, x1] * fx
    bot = image[y1][:, x0] * (1 - fx) + image[y1][:, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def letterbox_geometry(h: int, w: int, target: int) -> tuple[int, int, int, int]:
    """(content_h, content_w, top, left) for fitting h x w into target x target."""
    scale = target / max(h, w)
    ch = min(target, max(1, int(round(h * scale))))
    cw = min(target, max(1, int(round(w * scale))))
    return ch, cw, (target - ch) // 2, (target - cw) // 2


def resize_aspect_preserving(image, target_long_side: int, fill=None) -> np.ndarray:
    """Scale so the longer side equals the target, then centre on a square canvas.

    ``fill`` is the per-channel canvas colour (the dataset mean pixel);
    defaults to the image's own mean.
    """
    image = np.asarray(image, dtype=np.float32)
    if target_long_side < 8:
        raise ConfigError(f"target long side must be >= 8, got {target_long_side}")
    if image.ndim != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise DataError(f"expected a non-empty HxWxC image, got {image.shape}")
    h, w, c = image.shape
    ch, cw, top, left = letterbox_geometry(h, w, target_long_side)
    if fill is None:
        fill = image.reshape(-1, c).mean(axis=0)
    canvas = np.empty((target_long_side, target_long_side, c), dtype=np.float32)
    canvas[...] = np.asarray(fill, dtype=np.float32)
    canvas[top:top + ch, left:left + cw] = resize_bilinear(image, ch, cw)
    return canvas


def resize_fixed(image, resize: int, crop: int, random_crop: bool = False, rng=None) -> np.ndarray:
    """Squash to resize x resize (aspect ratio discarded), then crop crop x crop."""
    if crop > resize:
        raise ConfigError(f"crop {crop} exceeds resize {resize}")
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise DataError(f"expected a non-empty HxWxC image, got {image.shape}")
    out = resize_bilinear(image, resize, resize)
    if crop == resize:
        return out
    if random_crop:
        if rng is None:
            raise ValueError("random_crop needs an rng")
        top = int(rng.integers(0, resize - crop + 1))
        left = int(rng.integers(0, resize - crop + 1))
    else:
        top = left = (resize - crop) // 2
    return out[top:top + crop, left:left + crop].copy()


def hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, ::-1])


def color_jitter(image, config: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-channel multiplicative and additive jitter (a no-op when disabled)."""
    out = np.asarray(image, dtype=np.float32)
    if config.jitter and (config.jitter_scale > 0 or config.jitter_shift > 0):
        c = out.shape[2]
        mult = rng.uniform(1 - config.jitter_scale, 1 + config.jitter_scale, c).astype(np.float32)
        add = rng.uniform(-config.jitter_shift, config.jitter_shift, c).astype(np.float32)
        out = out * mult + add
    return out


def augment(image, config: AugmentationConfig, rng: np.random.Generator, mean=None,
            jitter: bool = True) -> np.ndarray:
    """Random flip, colour jitter and rotation, then optional mean subtraction.

    Labels are untouched by every step. Randomness comes only from ``rng``.
    Pass ``jitter=False`` when the colours were already jittered before resizing.
    """
    out = np.asarray(image, dtype=np.float32)
    c = out.shape[2]
    mean = np.zeros(c, dtype=np.float32) if mean is None else np.asarray(mean, dtype=np.float32)
    if config.flip_prob > 0 and rng.random() < config.flip_prob:
        out = hflip(out)
    if jitter:
        out = color_jitter(out, config, rng)
    if config.rotate and config.rotation_degrees > 0:
        angle = float(rng.uniform(-config.rotation_degrees, config.rotation_degrees))
        out = np.stack(
            [ndimage.rotate(out[..., k], angle, reshape=False, order=1, mode="constant", cval=float(mean[k]))
             for k in range(c)],
            axis=-1,
        ).astype(np.float32)
    if config.mean_subtraction:
        out = out - mean
    return out
