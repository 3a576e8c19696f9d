"""Raster file helpers: linearization of image assets and debug exports."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import AssetMissing

_LUMA = np.array([0.2126, 0.7152, 0.0722])


def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    """Inverse sRGB transfer curve on values in [0, 1]."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(v: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1 / 2.4) - 0.055)


def load_linear_image(path) -> np.ndarray:
    """Read an 8/16-bit grayscale or RGB(A) file as an H x W float32 linear-intensity raster in [0, 1].

    8-bit data goes through the inverse sRGB curve; colour images are then
    reduced to Rec.709 luminance.
    """
    path = Path(path)
    if not path.is_file():
        raise AssetMissing(f"asset not found: {path}")
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            # 16-bit sources are taken as already linear
            lin = np.clip(np.asarray(im, dtype=np.float64) / 65535.0, 0.0, 1.0)
            return lin.astype(np.float32)
        if im.mode == "LA":
            im = im.convert("L")
        elif im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    rgb = arr.ndim == 3
    lin = srgb_to_linear(np.clip(arr, 0.0, 1.0))
    if rgb:
        lin = lin[..., :3] @ _LUMA
    return lin.astype(np.float32)


def save_debug_png(raster: np.ndarray, path, scale: float | None = None) -> None:
    """Write a linear raster as an 8-bit sRGB PNG, normalized by ``scale`` (default: raster max)."""
    r = np.asarray(raster, dtype=np.float64)
    s = scale if scale is not None else (float(r.max()) or 1.0)
    out = np.round(linear_to_srgb(r / s) * 255.0).astype(np.uint8)
    Image.fromarray(out).save(path)
