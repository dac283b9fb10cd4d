"""Image files as float32 HxWx3 arrays in [0, 1] (RGB).

PPM (binary P6, 8-bit) is handled directly; PNG goes through Pillow.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from attrikit.errors import DataError


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _read_token(raw: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(raw):
        ch = raw[pos:pos + 1]
        if ch == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(raw) and not raw[pos:pos + 1].isspace():
        pos += 1
    return raw[start:pos], pos


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, pos = _read_token(raw, 0)
    if magic != b"P6":
        raise DataError(f"{path}: only binary P6 PPM is supported")
    try:
        w, pos = _read_token(raw, pos)
        h, pos = _read_token(raw, pos)
        maxval, pos = _read_token(raw, pos)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise DataError(f"{path}: malformed PPM header") from exc
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    body = raw[pos:pos + w * h * 3]
    if len(body) != w * h * 3:
        raise DataError(f"{path}: truncated PPM data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def write_ppm(image, path) -> None:
    arr = image if np.asarray(image).dtype == np.uint8 else to_uint8(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DataError(f"expected a non-empty HxWx3 image, got {arr.shape}")
    h, w, _ = arr.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes())


def read_image_u8(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    from PIL import Image

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc


def read_image(path) -> np.ndarray:
    return read_image_u8(path).astype(np.float32) / 255.0


def write_image(image, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        write_ppm(image, path)
        return
    from PIL import Image

    arr = image if np.asarray(image).dtype == np.uint8 else to_uint8(image)
    Image.fromarray(arr, mode="RGB").save(path)
