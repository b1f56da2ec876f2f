"""Rate and distortion measures: PSNR, MS-SSIM, bits per pixel, RD loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .color import ColorSpace, PlanarImage, mean_ciede2000
from .errors import UsageError

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
MSSSIM_MIN_SIZE = (WINDOW_SIZE - 1) * 2 ** (len(MSSSIM_WEIGHTS) - 1) + 1

# Lagrangian multipliers per bitrate configuration (MSE, MS-SSIM, CIEDE2000),
# paired by position.
LAMBDA_SETS = (
    (0.001, 0.01, 0.024),
    (0.005, 0.12, 0.12),
    (0.01, 2.4, 0.24),
    (0.02, 4.8, 0.48),
)


@dataclass(frozen=True)
class QualityReport:
    psnr_db: float
    msssim: float
    msssim_db: float
    ciede2000: float
    rate_bpp: float | None = None


def _pair(img1: PlanarImage, img2: PlanarImage) -> tuple[np.ndarray, np.ndarray]:
    for img in (img1, img2):
        if img.space is not ColorSpace.RGB:
            raise UsageError(f"expected RGB images, got {img.space.value}")
    if img1.data.shape != img2.data.shape:
        raise UsageError(f"image sizes differ: {img1.data.shape} vs {img2.data.shape}")
    return img1.data.astype(np.float64), img2.data.astype(np.float64)


def mse(img1: PlanarImage, img2: PlanarImage) -> float:
    a, b = _pair(img1, img2)
    return float(np.mean((a - b) ** 2))


def psnr(img1: PlanarImage, img2: PlanarImage) -> float:
    """PSNR in dB for unit peak; ``inf`` for identical images."""
    err = mse(img1, img2)
    if err == 0:
        return math.inf
    return 10 * math.log10(1.0 / err)


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering of a (C, H, W) stack."""
    k = g.size
    h, w = x.shape[1] - k + 1, x.shape[2] - k + 1
    rows = sum(g[i] * x[:, i : i + h, :] for i in range(k))
    return sum(g[j] * rows[:, :, j : j + w] for j in range(k))


def _ssim_terms(x: np.ndarray, y: np.ndarray, g: np.ndarray):
    c1, c2 = K1**2, K2**2
    mu_x, mu_y = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x**2
    syy = _filter_valid(y * y, g) - mu_y**2
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    return (lum * cs).mean(axis=(1, 2)), cs.mean(axis=(1, 2))


def _downsample(x: np.ndarray) -> np.ndarray:
    # 2x2 average with zero padding on odd sizes (count_include_pad).
    c, h, w = x.shape
    x = np.pad(x, ((0, 0), (0, h % 2), (0, w % 2)))
    return x.reshape(c, x.shape[1] // 2, 2, x.shape[2] // 2, 2).mean(axis=(2, 4))


def ms_ssim(img1: PlanarImage, img2: PlanarImage) -> float:
    """Five-scale MS-SSIM, evaluated per RGB channel and averaged.

    Raises:
        UsageError: if the smaller image side is below ``MSSSIM_MIN_SIZE``.
    """
    x, y = _pair(img1, img2)
    if min(x.shape[1:]) < MSSSIM_MIN_SIZE:
        raise UsageError(
            f"MS-SSIM needs images of at least {MSSSIM_MIN_SIZE}x{MSSSIM_MIN_SIZE} pixels, "
            f"got {x.shape[1]}x{x.shape[2]}"
        )
    g = gaussian_window()
    weights = np.asarray(MSSSIM_WEIGHTS)
    values = []
    for level in range(len(weights)):
        ssim, cs = _ssim_terms(x, y, g)
        if level < len(weights) - 1:
            values.append(np.maximum(cs, 0))
            x, y = _downsample(x), _downsample(y)
        else:
            values.append(np.maximum(ssim, 0))
    stack = np.stack(values)  # (levels, channels)
    per_channel = np.prod(stack ** weights[:, None], axis=0)
    return float(per_channel.mean())


def msssim_to_db(v: float) -> float:
    if v >= 1:
        return math.inf
    return -10 * math.log10(1 - v)


def rate_bpp(total_bits: int | float, height: int, width: int) -> float:
    if height <= 0 or width <= 0:
        raise UsageError("rate needs a positive image area")
    return total_bits / (height * width)


def rd_loss(img: PlanarImage, recon: PlanarImage, rate: float, lam1: float, lam2: float, lam3: float) -> float:
    """R + λ1·MSE + λ2·(1 − MS-SSIM) + λ3·mean ΔE00, distortions on RGB."""
    if min(lam1, lam2, lam3) < 0:
        raise UsageError("Lagrangian multipliers must be non-negative")
    loss = rate
    if lam1:
        loss += lam1 * mse(img, recon)
    if lam2:
        loss += lam2 * (1.0 - ms_ssim(img, recon))
    if lam3:
        loss += lam3 * mean_ciede2000(img, recon)
    return loss


def quality_report(ref: PlanarImage, test: PlanarImage, rate: float | None = None) -> QualityReport:
    v = ms_ssim(ref, test)
    return QualityReport(psnr(ref, test), v, msssim_to_db(v), mean_ciede2000(ref, test), rate)
