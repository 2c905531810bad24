"""Image and mask file helpers shared across pipeline stages.

Images are RGB uint8 arrays of shape (H, W, 3). Inpaint masks are boolean
arrays of shape (H, W) persisted as single-channel PNG where 0 = keep and
255 = inpaint.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DecodeFailure


def load_image(path: str | Path) -> np.ndarray:
    """Load an image file as an RGB uint8 array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DecodeFailure(f"cannot decode image {path}: {exc}") from exc


def save_image(path: str | Path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path)


def load_mask(path: str | Path) -> np.ndarray:
    """Load a single-channel mask PNG as a boolean raster (True = inpaint)."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L")) > 127
    except (OSError, ValueError) as exc:
        raise DecodeFailure(f"cannot decode mask {path}: {exc}") from exc


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raster = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(raster, mode="L").save(path)


def resize_image(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resize an RGB image to (width, height) with bilinear filtering."""
    out = Image.fromarray(np.asarray(image, dtype=np.uint8)).resize(size, Image.BILINEAR)
    return np.asarray(out, dtype=np.uint8)


def resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resize a boolean mask to (width, height) with nearest-neighbour filtering."""
    raster = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    out = Image.fromarray(raster, mode="L").resize(size, Image.NEAREST)
    return np.asarray(out) > 127


def image_digest(image: np.ndarray) -> str:
    """Stable content key for an image array, used by mock backend fixtures."""
    arr = np.ascontiguousarray(np.asarray(image, dtype=np.uint8))
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()[:16]
