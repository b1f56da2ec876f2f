"""Colour conversions (RGB, full-range BT.601 YUV, CIELAB) and CIEDE2000."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import UsageError


class ColorSpace(enum.Enum):
    RGB = "RGB"
    YUV = "YUV"
    LAB = "LAB"
    LUMA = "LUMA"  # single Y plane
    CHROMA = "CHROMA"  # U and V planes


_PLANES = {ColorSpace.RGB: 3, ColorSpace.YUV: 3, ColorSpace.LAB: 3, ColorSpace.LUMA: 1, ColorSpace.CHROMA: 2}


@dataclass(frozen=True)
class PlanarImage:
    """Channel-planar float image, ``data`` shaped (planes, H, W)."""

    space: ColorSpace
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise UsageError(f"planar image data must be (planes, H, W), got {data.shape}")
        if data.shape[0] != _PLANES[self.space]:
            raise UsageError(
                f"{self.space.value} image needs {_PLANES[self.space]} planes, got {data.shape[0]}"
            )
        if min(data.shape[1:]) < 1:
            raise UsageError("image dimensions must be at least 1x1")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_hwc(cls, array, space: ColorSpace = ColorSpace.RGB) -> "PlanarImage":
        """Build from an (H, W, 3) array; uint8 input is rescaled to [0, 1]."""
        a = np.asarray(array)
        scale = 255.0 if a.dtype == np.uint8 else 1.0
        return cls(space, np.transpose(a.astype(np.float64) / scale, (2, 0, 1)))

    def to_hwc(self) -> np.ndarray:
        return np.transpose(self.data, (1, 2, 0))


def _require(img: PlanarImage, space: ColorSpace) -> None:
    if img.space is not space:
        raise UsageError(f"expected a {space.value} image, got {img.space.value}")


KR, KB = 0.299, 0.114
KG = 1.0 - KR - KB
RGB_TO_YUV = np.array(
    [
        [KR, KG, KB],
        [-KR / (2 - 2 * KB), -KG / (2 - 2 * KB), 0.5],
        [0.5, -KG / (2 - 2 * KR), -KB / (2 - 2 * KR)],
    ]
)
YUV_TO_RGB = np.linalg.inv(RGB_TO_YUV)
_CHROMA_OFFSET = np.array([0.0, 0.5, 0.5])


def rgb_to_yuv(img: PlanarImage) -> PlanarImage:
    """Full-range BT.601: Y in [0, 1], U and V centred on 0.5."""
    _require(img, ColorSpace.RGB)
    yuv = np.tensordot(RGB_TO_YUV, img.data.astype(np.float64), axes=1)
    return PlanarImage(ColorSpace.YUV, yuv + _CHROMA_OFFSET[:, None, None])


def yuv_to_rgb(img: PlanarImage, clamp: bool = True) -> PlanarImage:
    _require(img, ColorSpace.YUV)
    centred = img.data.astype(np.float64) - _CHROMA_OFFSET[:, None, None]
    rgb = np.tensordot(YUV_TO_RGB, centred, axes=1)
    if clamp:
        rgb = np.clip(rgb, 0.0, 1.0)
    return PlanarImage(ColorSpace.RGB, rgb)


def split_yuv(img: PlanarImage) -> tuple[PlanarImage, PlanarImage]:
    _require(img, ColorSpace.YUV)
    return PlanarImage(ColorSpace.LUMA, img.data[:1]), PlanarImage(ColorSpace.CHROMA, img.data[1:])


def merge_yuv(luma: PlanarImage, chroma: PlanarImage) -> PlanarImage:
    _require(luma, ColorSpace.LUMA)
    _require(chroma, ColorSpace.CHROMA)
    if luma.data.shape[1:] != chroma.data.shape[1:]:
        raise UsageError("luma and chroma planes differ in size")
    return PlanarImage(ColorSpace.YUV, np.concatenate([luma.data, chroma.data]))


# sRGB primaries, D65 white.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
D65_WHITE = _RGB_TO_XYZ.sum(axis=1)
_EPS = 216 / 24389
_KAPPA = 24389 / 27


def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _EPS, np.cbrt(t), (_KAPPA * t + 16) / 116)


def rgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert a (3, ...) sRGB array in [0, 1] to CIELAB."""
    lin = srgb_to_linear(rgb)
    xyz = np.tensordot(_RGB_TO_XYZ, lin, axes=1)
    fx, fy, fz = (_lab_f(xyz[i] / D65_WHITE[i]) for i in range(3))
    return np.stack([116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)])


def rgb_to_lab(img: PlanarImage) -> PlanarImage:
    _require(img, ColorSpace.RGB)
    return PlanarImage(ColorSpace.LAB, rgb_array_to_lab(img.data))


def ciede2000_array(lab1: np.ndarray, lab2: np.ndarray, kl=1.0, kc=1.0, kh=1.0) -> np.ndarray:
    """Vectorised CIEDE2000 between two LAB arrays with the channel axis first."""
    L1, a1, b1 = (np.asarray(v, dtype=np.float64) for v in lab1)
    L2, a2, b2 = (np.asarray(v, dtype=np.float64) for v in lab2)

    c_bar = 0.5 * (np.hypot(a1, b1) + np.hypot(a2, b2))
    c7 = c_bar**7
    g = 0.5 * (1 - np.sqrt(c7 / (c7 + 25.0**7)))
    a1p, a2p = (1 + g) * a1, (1 + g) * a2
    c1p, c2p = np.hypot(a1p, b1), np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360
    h1p = np.where((a1p == 0) & (b1 == 0), 0.0, h1p)
    h2p = np.where((a2p == 0) & (b2 == 0), 0.0, h2p)

    dL = L2 - L1
    dC = c2p - c1p
    chroma_zero = (c1p * c2p) == 0
    dh = h2p - h1p
    dh = np.where(dh > 180, dh - 360, np.where(dh < -180, dh + 360, dh))
    dh = np.where(chroma_zero, 0.0, dh)
    dH = 2 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh) / 2)

    L_bar = 0.5 * (L1 + L2)
    C_bar = 0.5 * (c1p + c2p)
    hsum = h1p + h2p
    h_bar = np.where(
        np.abs(h1p - h2p) <= 180,
        hsum / 2,
        np.where(hsum < 360, (hsum + 360) / 2, (hsum - 360) / 2),
    )
    h_bar = np.where(chroma_zero, hsum, h_bar)

    t = (
        1
        - 0.17 * np.cos(np.radians(h_bar - 30))
        + 0.24 * np.cos(np.radians(2 * h_bar))
        + 0.32 * np.cos(np.radians(3 * h_bar + 6))
        - 0.20 * np.cos(np.radians(4 * h_bar - 63))
    )
    d_theta = 30 * np.exp(-(((h_bar - 275) / 25) ** 2))
    C7 = C_bar**7
    r_c = 2 * np.sqrt(C7 / (C7 + 25.0**7))
    s_l = 1 + 0.015 * (L_bar - 50) ** 2 / np.sqrt(20 + (L_bar - 50) ** 2)
    s_c = 1 + 0.045 * C_bar
    s_h = 1 + 0.015 * C_bar * t
    r_t = -np.sin(np.radians(2 * d_theta)) * r_c

    tl = dL / (kl * s_l)
    tc = dC / (kc * s_c)
    th = dH / (kh * s_h)
    return np.sqrt(tl**2 + tc**2 + th**2 + r_t * tc * th)


def ciede2000(lab1, lab2) -> float:
    """ΔE00 between two LAB triplets (kL = kC = kH = 1)."""
    return float(ciede2000_array(np.asarray(lab1, float), np.asarray(lab2, float)))


def mean_ciede2000(img1: PlanarImage, img2: PlanarImage) -> float:
    """Mean per-pixel ΔE00 of two RGB images, computed over the whole array at once."""
    _require(img1, ColorSpace.RGB)
    _require(img2, ColorSpace.RGB)
    if img1.data.shape != img2.data.shape:
        raise UsageError(f"image sizes differ: {img1.data.shape} vs {img2.data.shape}")
    de = ciede2000_array(rgb_array_to_lab(img1.data), rgb_array_to_lab(img2.data))
    return float(de.mean())
