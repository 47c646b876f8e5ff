"""Grayscale conversion, bilinear resizing and flattening to classifier inputs.

Gray images are plain ``(height, width)`` uint8 numpy arrays; RGB rasters are
``(height, width, 3)`` uint8 arrays.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import InvalidInputError

INPUT_WIDTH = 64
INPUT_HEIGHT = 32
INPUT_SIZE = INPUT_WIDTH * INPUT_HEIGHT


def check_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise InvalidInputError(f"expected a 2-D uint8 gray image, got shape {img.shape} dtype {img.dtype}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidInputError(f"image has zero dimension: {img.shape}")
    return img


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma, ``round(0.299 R + 0.587 G + 0.114 B)`` with halves rounded up.

    Computed in integer arithmetic so results are bit-exact. A 2-D input is
    taken to be gray already and returned unchanged.
    """
    img = np.asarray(img)
    if img.size == 0:
        raise InvalidInputError(f"image has zero dimension: {img.shape}")
    if img.ndim == 2:
        return check_gray(img)
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise InvalidInputError(f"expected an RGB raster of shape (h, w, 3), got {img.shape}")
    if img.dtype != np.uint8:
        raise InvalidInputError(f"expected 8-bit channels, got {img.dtype}")
    out = np.empty(img.shape[:2], np.uint8)
    _kernels.rgb_to_gray(img, out)
    return out


def resize(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers; sample coordinates clamp to the border."""
    img = check_gray(img)
    if out_w < 1 or out_h < 1:
        raise InvalidInputError(f"target size must be positive, got {out_w}x{out_h}")
    out = np.empty((out_h, out_w), np.uint8)
    h, w = img.shape
    _kernels.bilinear_crop_resize(np.ascontiguousarray(img), 0, 0, w, h, out)
    return out


def flatten(img: np.ndarray) -> np.ndarray:
    """Row-major flatten of a 64x32 image into a float vector in [0, 1]."""
    img = check_gray(img)
    if img.shape != (INPUT_HEIGHT, INPUT_WIDTH):
        raise InvalidInputError(
            f"flatten expects a {INPUT_WIDTH}x{INPUT_HEIGHT} image, got {img.shape[1]}x{img.shape[0]}"
        )
    return img.reshape(-1).astype(np.float64) / 255.0


def as_pixel_bytes(x: np.ndarray) -> np.ndarray | None:
    """Recover the uint8 pixels behind a flattened input, or None if x is not byte-derived."""
    x = np.asarray(x, dtype=np.float64)
    q = np.rint(x * 255.0)
    if q.min(initial=0.0) < 0 or q.max(initial=0.0) > 255:
        return None
    if not np.array_equal(q / 255.0, x):
        return None
    return q.astype(np.uint8)
