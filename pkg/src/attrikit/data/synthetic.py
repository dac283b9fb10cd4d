"""Procedural multi-attribute scenes with exact labels.

Each attribute is a visual token (shape + colour) confined to a region of
the image. An attribute is present in an image iff its token is drawn
there. Exactly ``round(prevalence * n)`` images of every split carry each
attribute, so empirical prevalence matches the request up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from attrikit.data.imageio import to_uint8, write_ppm
from attrikit.data.manifest import DatasetManifest, Record
from attrikit.errors import ConfigError

SHAPES = ("square", "circle", "triangle", "cross", "ring", "diamond", "hbar", "vbar", "tallrect", "widerect")
REGIONS = ("upper-half", "lower-half", "anywhere")
COLORS = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.7, 0.2),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.9, 0.85, 0.15),
    "magenta": (0.8, 0.2, 0.75),
    "cyan": (0.15, 0.8, 0.85),
    "orange": (0.95, 0.55, 0.1),
    "white": (0.95, 0.95, 0.95),
    "black": (0.05, 0.05, 0.05),
    "purple": (0.45, 0.15, 0.6),
}


@dataclass
class AttributeSpec:
    name: str
    shape: str
    color: str
    region: str = "anywhere"
    prevalence: float = 0.5

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise ConfigError(f"unknown colour {self.color!r}")
        if self.region not in REGIONS:
            raise ConfigError(f"unknown region {self.region!r}")
        if not 0 < self.prevalence < 1:
            raise ConfigError("prevalence must lie in (0, 1)")


@dataclass
class SyntheticSpec:
    attributes: list[AttributeSpec]
    split_counts: dict[str, int] = field(default_factory=lambda: {"train": 800, "val": 200, "test": 200})
    height_range: tuple[int, int] = (64, 64)
    aspect_range: tuple[float, float] = (1.0, 1.0)  # height / width
    token_scale: tuple[float, float] = (0.22, 0.3)  # token side relative to min(h, w)
    noise: float = 0.03
    distractors: int = 0  # grey tokens with random shapes, never labelled
    seed: int = 0

    def __post_init__(self):
        if not self.attributes:
            raise ConfigError("need at least one attribute")
        if self.height_range[0] < 8 or self.height_range[0] > self.height_range[1]:
            raise ConfigError("height_range must be an increasing pair with minimum >= 8")
        if not 0 < self.aspect_range[0] <= self.aspect_range[1]:
            raise ConfigError("aspect_range must be a positive increasing pair")
        for split, n in self.split_counts.items():
            if n < 1:
                raise ConfigError(f"split {split!r} needs at least one image")

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]


def shape_mask(shape: str, size_h: int, size_w: int) -> np.ndarray:
    """Boolean mask of a token filling a size_h x size_w box."""
    yy, xx = np.mgrid[0:size_h, 0:size_w]
    v = (yy + 0.5) / size_h * 2 - 1  # [-1, 1]
    u = (xx + 0.5) / size_w * 2 - 1
    if shape == "square":
        return np.ones((size_h, size_w), dtype=bool)
    if shape == "circle":
        return u * u + v * v <= 1.0
    if shape == "ring":
        r = u * u + v * v
        return (r <= 1.0) & (r >= 0.3)
    if shape == "triangle":
        return np.abs(u) <= (v + 1) / 2
    if shape == "cross":
        return (np.abs(u) <= 0.3) | (np.abs(v) <= 0.3)
    if shape == "diamond":
        return np.abs(u) + np.abs(v) <= 1.0
    if shape == "hbar":
        return np.abs(v) <= 0.35
    if shape == "vbar":
        return np.abs(u) <= 0.35
    if shape == "tallrect":
        return np.abs(u) <= 0.5
    if shape == "widerect":
        return np.abs(v) <= 0.5
    raise ConfigError(f"unknown shape {shape!r}")


def _region_rows(region: str, h: int, th: int) -> tuple[int, int]:
    """Inclusive range of valid top rows for a token of height th."""
    half = h // 2
    if region == "upper-half":
        return 0, max(0, half - th)
    if region == "lower-half":
        return half, max(half, h - th)
    return 0, h - th


def _overlaps(box, boxes) -> bool:
    y, x, h, w = box
    return any(y < by + bh and by < y + h and x < bx + bw and bx < x + w for by, bx, bh, bw in boxes)


def render_scene(spec: SyntheticSpec, present: np.ndarray, rng: np.random.Generator):
    """Render one image; returns (uint8 HxWx3 image, token boxes by attribute index)."""
    h = int(rng.integers(spec.height_range[0], spec.height_range[1] + 1))
    aspect = float(rng.uniform(*spec.aspect_range))
    w = max(8, int(round(h / aspect)))
    base = rng.uniform(0.35, 0.65)
    tilt = rng.uniform(-0.1, 0.1, 2)
    yy, xx = np.mgrid[0:h, 0:w]
    bg = base + tilt[0] * (yy / h - 0.5) + tilt[1] * (xx / w - 0.5)
    img = np.repeat(bg[..., None], 3, axis=2)
    img += rng.normal(0, spec.noise, img.shape)

    boxes: list[tuple[int, int, int, int]] = []
    placed: dict[int, tuple[int, int, int, int]] = {}
    short = min(h, w)
    tokens = [(j, spec.attributes[j]) for j in np.flatnonzero(present)]
    for _ in range(spec.distractors):
        tokens.append((-1, None))
    for j, attr in tokens:
        size = max(3, int(round(short * rng.uniform(*spec.token_scale))))
        th = tw = size
        shape = attr.shape if attr is not None else SHAPES[int(rng.integers(len(SHAPES)))]
        if shape in ("tallrect", "vbar"):
            th = min(h, int(round(size * 1.6)))
        region = attr.region if attr is not None else "anywhere"
        th = min(th, h // 2 if region != "anywhere" else h)
        tw = min(tw, w)
        lo, hi = _region_rows(region, h, th)
        box = None
        for _attempt in range(50):
            cand = (int(rng.integers(lo, hi + 1)), int(rng.integers(0, w - tw + 1)), th, tw)
            if not _overlaps(cand, boxes):
                box = cand
                break
        if box is None:
            box = cand
        boxes.append(box)
        y, x, bh, bw = box
        mask = shape_mask(shape, bh, bw)
        if attr is not None:
            color = np.array(COLORS[attr.color]) + rng.normal(0, 0.03, 3)
            placed[int(j)] = box
        else:
            color = np.full(3, rng.uniform(0.2, 0.8))
        patch = img[y:y + bh, x:x + bw]
        patch[mask] = color
    return to_uint8(np.clip(img, 0, 1)), placed


def assign_labels(spec: SyntheticSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.zeros((n, len(spec.attributes)), dtype=np.int8)
    for j, attr in enumerate(spec.attributes):
        k = int(round(attr.prevalence * n))
        labels[rng.permutation(n)[:k], j] = 1
    return labels


def generate_synthetic(spec: SyntheticSpec, out_dir) -> DatasetManifest:
    """Render every split to ``out_dir/images/*.ppm`` and write the manifest files."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records: list[Record] = []
    boxes: dict[str, dict[int, tuple]] = {}
    idx = 0
    for s, (split, n) in enumerate(spec.split_counts.items()):
        rng = np.random.default_rng([spec.seed, s])
        labels = assign_labels(spec, n, rng)
        for i in range(n):
            img, placed = render_scene(spec, labels[i], rng)
            rel = f"images/{idx:06d}.ppm"
            write_ppm(img, out / rel)
            records.append(Record(rel, labels[i].copy(), split))
            boxes[rel] = placed
            idx += 1
    manifest = DatasetManifest(spec.names, records, root=out)
    manifest.mean_pixel = manifest.compute_mean_pixel()
    manifest.save(out)
    manifest.token_boxes = boxes
    return manifest


def standard_spec(
    split_counts: dict[str, int] | None = None,
    seed: int = 0,
    size: int = 64,
    prevalences: Sequence[float] = (0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05),
) -> SyntheticSpec:
    """Eight attributes on square images; attribute 0 lives in the lower half."""
    tokens = [
        ("lower_red_square", "square", "red", "lower-half"),
        ("upper_blue_circle", "circle", "blue", "upper-half"),
        ("green_triangle", "triangle", "green", "anywhere"),
        ("yellow_cross", "cross", "yellow", "anywhere"),
        ("magenta_ring", "ring", "magenta", "anywhere"),
        ("cyan_diamond", "diamond", "cyan", "anywhere"),
        ("orange_hbar", "hbar", "orange", "anywhere"),
        ("white_vbar", "vbar", "white", "anywhere"),
    ]
    attrs = [AttributeSpec(n, s, c, r, p) for (n, s, c, r), p in zip(tokens, prevalences)]
    return SyntheticSpec(
        attributes=attrs,
        split_counts=dict(split_counts or {"train": 2000, "val": 400, "test": 400}),
        height_range=(size, size),
        seed=seed,
    )
