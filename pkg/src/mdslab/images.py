"""Minimal binary PGM (P5) and PPM (P6) writers plus bilinear resizing.

8-bit only. Writers are atomic (temp file + rename) so partially written
images never appear under the target name.
"""

from __future__ import annotations

import numpy as np

from .container import _atomic_write


def to_uint8(img: np.ndarray, lo: float | None = None,
             hi: float | None = None) -> np.ndarray:
    """Scale a real array into 0..255. Constant input maps to 0."""
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    lo = float(img.min()) if lo is None else lo
    hi = float(img.max()) if hi is None else hi
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.uint8)
    scaled = (img - lo) / (hi - lo)
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: str, img: np.ndarray) -> None:
    """Binary greyscale image; img must be 2-D uint8 (or convertible)."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {img.shape}")
    if img.dtype != np.uint8:
        img = to_uint8(img)
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    _atomic_write(path, header + img.tobytes())


def write_ppm(path: str, img: np.ndarray) -> None:
    """Binary RGB image; img must be [h, w, 3] uint8."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM needs an [h, w, 3] image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError("PPM writer expects uint8 data")
    h, w, _ = img.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    _atomic_write(path, header + img.tobytes())


def read_pnm(path: str) -> np.ndarray:
    """Read back a binary PGM/PPM written by this module (for tests)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    data = np.frombuffer(blob[pos:], dtype=np.uint8)
    if magic == b"P5":
        return data.reshape(h, w).copy()
    if magic == b"P6":
        return data.reshape(h, w, 3).copy()
    raise ValueError(f"unsupported magic {magic!r}")


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear upsampling/downsampling with corner-aligned sampling.

    Output pixel (i, j) samples the input at i*(h-1)/(out_h-1),
    j*(w-1)/(out_w-1); a size-1 axis is treated as constant.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("bilinear_resize expects a 2-D image")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be >= 1")
    h, w = img.shape
    ys = (np.arange(out_h) * (h - 1) / (out_h - 1)
          if out_h > 1 and h > 1 else np.zeros(out_h))
    xs = (np.arange(out_w) * (w - 1) / (out_w - 1)
          if out_w > 1 and w > 1 else np.zeros(out_w))
    y0 = np.clip(np.floor(ys).astype(int), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(w - 2, 0))
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bottom = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def block_upsample(img: np.ndarray, factor_h: int, factor_w: int) -> np.ndarray:
    """Nearest-neighbor block replication (each cell becomes a block)."""
    return np.repeat(np.repeat(img, factor_h, axis=0), factor_w, axis=1)
