"""Reading and writing PNG / PPM (RGB) and PGM (single plane) files via Pillow."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .color import ColorSpace, PlanarImage
from .errors import SlicError, UsageError


class ImageIOError(SlicError, OSError):
    """Writing an image failed."""


def read_image(path: str | Path) -> PlanarImage:
    """Load an 8-bit image as RGB in [0, 1]; greyscale files are replicated to 3 planes."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("RGB", "L"):
                im = im.convert("RGB")
            arr = np.asarray(im)
    except (UnidentifiedImageError, OSError) as exc:
        raise UsageError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return PlanarImage.from_hwc(arr)


def to_uint8(data: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(data, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_image(path: str | Path, img: PlanarImage) -> None:
    """Write an RGB image; the format follows the suffix (``.png``, ``.ppm``)."""
    if img.space is not ColorSpace.RGB:
        raise UsageError(f"can only write RGB images, got {img.space.value}")
    path = Path(path)
    fmt = {".png": "PNG", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise UsageError(f"unsupported output format {path.suffix!r}; use .png or .ppm")
    try:
        Image.fromarray(to_uint8(img.to_hwc()), "RGB").save(path, fmt)
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc


def write_pgm(path: str | Path, plane: np.ndarray) -> None:
    """Write a 2-D uint8 array as binary PGM (P5)."""
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.dtype != np.uint8:
        raise UsageError("PGM export needs a 2-D uint8 array")
    try:
        Image.fromarray(plane, "L").save(path, "PPM")
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc


def read_pgm(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"))
