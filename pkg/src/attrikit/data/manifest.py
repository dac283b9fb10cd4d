"""Dataset manifests on disk.

Layout under a dataset directory::

    manifest.csv      header "path,<attr1>,...,<attrM>", labels as 0/1
    train.txt etc.    one relative image path per line, per split
    mean.txt          "r=<float>", "g=<float>", "b=<float>" (training-split mean pixel)
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from attrikit.data.imageio import read_image_u8
from attrikit.errors import DataError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class Record:
    path: str
    labels: np.ndarray
    split: str = "train"


@dataclass
class DatasetManifest:
    attribute_names: list[str]
    records: list[Record]
    root: Path = Path(".")
    mean_pixel: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))

    def __post_init__(self):
        self.root = Path(self.root)
        self.mean_pixel = np.asarray(self.mean_pixel, dtype=np.float64)
        m = len(self.attribute_names)
        seen: dict[str, str] = {}
        for r in self.records:
            r.labels = np.asarray(r.labels, dtype=np.int8)
            if r.labels.shape != (m,):
                raise DataError(f"{r.path}: {r.labels.size} labels, expected {m}")
            if not np.isin(r.labels, (0, 1)).all():
                raise DataError(f"{r.path}: labels must be 0 or 1")
            if r.split not in SPLITS:
                raise DataError(f"{r.path}: unknown split {r.split!r}")
            if r.path in seen and seen[r.path] != r.split:
                raise DataError(f"{r.path} appears in both {seen[r.path]} and {r.split}")
            seen[r.path] = r.split
        self.token_boxes: Optional[dict] = None

    @property
    def num_attributes(self) -> int:
        return len(self.attribute_names)

    def split(self, name: str) -> "SplitView":
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        return SplitView(self, name, [r for r in self.records if r.split == name])

    def compute_mean_pixel(self) -> np.ndarray:
        total = np.zeros(3)
        count = 0
        for r in self.records:
            if r.split != "train":
                continue
            img = read_image_u8(self.root / r.path).astype(np.float64) / 255.0
            total += img.reshape(-1, 3).sum(axis=0)
            count += img.shape[0] * img.shape[1]
        if count == 0:
            raise DataError("no training images to compute the mean pixel from")
        return total / count

    def check_positive_counts(self) -> list[str]:
        """Names of attributes with no positive example in the training split."""
        train = self.split("train")
        if not len(train):
            return list(self.attribute_names)
        pos = train.labels().sum(axis=0)
        flagged = [n for n, c in zip(self.attribute_names, pos) if c == 0]
        for n in flagged:
            log.warning("attribute %s has no positive training example", n)
        return flagged

    def save(self, directory=None) -> None:
        d = Path(directory) if directory is not None else self.root
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", *self.attribute_names])
            for r in self.records:
                w.writerow([r.path, *(int(v) for v in r.labels)])
        for s in SPLITS:
            paths = [r.path for r in self.records if r.split == s]
            (d / f"{s}.txt").write_text("".join(p + "\n" for p in paths), encoding="utf-8")
        r, g, b = (float(v) for v in self.mean_pixel)
        (d / "mean.txt").write_text(f"r={r!r}\ng={g!r}\nb={b!r}\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "DatasetManifest":
        d = Path(directory)
        if d.is_file():
            d = d.parent
        csv_path = d / "manifest.csv"
        if not csv_path.exists():
            raise DataError(f"no manifest.csv in {d}")
        split_of: dict[str, str] = {}
        for s in SPLITS:
            p = d / f"{s}.txt"
            if p.exists():
                for line in p.read_text(encoding="utf-8").splitlines():
                    if line.strip():
                        if line.strip() in split_of:
                            raise DataError(f"{line.strip()} listed in two split files")
                        split_of[line.strip()] = s
        records = []
        with open(csv_path, newline="", encoding="utf-8") as fh:
            rows = csv.reader(fh)
            header = next(rows, None)
            if not header or header[0] != "path":
                raise DataError(f"{csv_path}: header must start with 'path'")
            names = header[1:]
            for line_no, row in enumerate(rows, start=2):
                if not row:
                    continue
                if len(row) != len(names) + 1:
                    raise DataError(f"{csv_path}:{line_no}: expected {len(names) + 1} fields")
                try:
                    labels = np.array([int(v) for v in row[1:]], dtype=np.int8)
                except ValueError as exc:
                    raise DataError(f"{csv_path}:{line_no}: non-integer label") from exc
                records.append(Record(row[0], labels, split_of.get(row[0], "train")))
        mean = np.full(3, 0.5)
        mp = d / "mean.txt"
        if mp.exists():
            kv = dict(line.split("=", 1) for line in mp.read_text(encoding="utf-8").split() if "=" in line)
            try:
                mean = np.array([float(kv["r"]), float(kv["g"]), float(kv["b"])])
            except (KeyError, ValueError) as exc:
                raise DataError(f"{mp}: needs r=, g=, b= entries") from exc
        return cls(names, records, root=d, mean_pixel=mean)


class SplitView:
    """The records of one split, with lazily cached uint8 images."""

    def __init__(self, manifest: DatasetManifest, name: str, records: list[Record]):
        self.manifest = manifest
        self.name = name
        self.records = records
        self._images: Optional[list[np.ndarray]] = None

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        m = self.manifest.num_attributes
        if not self.records:
            return np.zeros((0, m), dtype=np.int8)
        return np.stack([r.labels for r in self.records])

    def images(self) -> list[np.ndarray]:
        if self._images is None:
            imgs = []
            for r in self.records:
                p = self.manifest.root / r.path
                if not p.exists():
                    raise DataError(f"missing image {p}")
                imgs.append(read_image_u8(p))
            self._images = imgs
        return self._images

    def with_labels(self, labels: np.ndarray) -> "SplitView":
        """A copy of this view with replaced labels (images shared)."""
        labels = np.asarray(labels, dtype=np.int8)
        recs = [Record(r.path, l.copy(), r.split) for r, l in zip(self.records, labels)]
        view = SplitView(self.manifest, self.name, recs)
        view._images = self._images
        return view
