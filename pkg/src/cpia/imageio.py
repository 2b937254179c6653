"""Frame and mask image I/O.

Frames are float tensors in tanh range [-1, 1] shaped (3, H, W). They are
written as binary PPM (P6, maxval 255) or PNG with the byte mapping
``clamp(round((x + 1) / 2 * 255))``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import ShapeError


def to_bytes_image(x) -> np.ndarray:
    """(3, H, W) float in [-1, 1] -> (H, W, 3) uint8."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeError(f"frames must be (3, H, W), got {x.shape}")
    v = np.clip(np.round((x + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(v.transpose(1, 2, 0))


def from_bytes_image(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) float32 in [-1, 1]."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"expected an RGB image, got shape {rgb.shape}")
    return (rgb.astype(np.float32).transpose(2, 0, 1) / 255.0 * 2.0 - 1.0).astype(np.float32)


def write_ppm(path, x) -> Path:
    rgb = to_bytes_image(x)
    H, W, _ = rgb.shape
    path = Path(path)
    path.write_bytes(b"P6\n%d %d\n255\n" % (W, H) + rgb.tobytes())
    return path


def write_png(path, x) -> Path:
    path = Path(path)
    Image.fromarray(to_bytes_image(x)).save(path, format="PNG")
    return path


def write_frame(path, x) -> Path:
    if Path(path).suffix.lower() == ".png":
        return write_png(path, x)
    return write_ppm(path, x)


def read_image(path) -> np.ndarray:
    """Read a PNG/PPM/any Pillow-readable RGB image as (3, H, W) in [-1, 1]."""
    with Image.open(path) as im:
        return from_bytes_image(np.asarray(im.convert("RGB")))


def read_mask(path) -> np.ndarray:
    """Read an 8-bit grayscale PNG or PGM mask; nonzero pixels are on."""
    with Image.open(path) as im:
        a = np.asarray(im.convert("L") if im.mode not in ("L", "1", "I", "I;16") else im)
    return a != 0


def write_mask(path, mask) -> Path:
    """Write a boolean mask as 8-bit grayscale (0 / 255); format from suffix."""
    mask = np.asarray(mask, dtype=bool)
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        H, W = mask.shape
        path.write_bytes(b"P5\n%d %d\n255\n" % (W, H) + (mask.astype(np.uint8) * 255).tobytes())
    else:
        Image.fromarray(mask.astype(np.uint8) * 255).save(path)
    return path
