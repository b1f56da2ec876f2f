"""Latent diagnostics, per-channel rates and channel impulse responses."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .entropy.models import EntropyParams, GaussianConditional, channel_totals, shared_gaussian_conditional
from .errors import UsageError
from .imageio import ImageIOError, write_pgm
from .model import LATENT_STRIDE, BranchModel

MAP_NAMES = ("latent", "mu", "sigma", "residual", "bits", "avg_bits")


def _bits(y_hat, params: EntropyParams, gc: GaussianConditional | None) -> np.ndarray:
    y_hat = np.asarray(y_hat)
    if y_hat.ndim != 3 or y_hat.shape != params.mu.shape:
        raise UsageError(f"latent shape {y_hat.shape} does not match parameter shape {params.mu.shape}")
    return (gc or shared_gaussian_conditional()).bits(y_hat, params.mu, params.sigma)


@dataclass(frozen=True)
class LatentDiagnostics:
    channel: int
    latent: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    residual: np.ndarray
    bits: np.ndarray
    avg_bits: np.ndarray

    def maps(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in MAP_NAMES}


def latent_diagnostics(y_hat, params: EntropyParams, gc: GaussianConditional | None = None) -> LatentDiagnostics:
    """Maps of the channel with the largest total cost, plus the channel-averaged cost map."""
    bits = _bits(y_hat, params, gc)
    c = int(np.argmax(channel_totals(bits)))
    y = np.asarray(y_hat, dtype=np.float64)
    mu = params.mu.astype(np.float64)
    sigma = params.sigma.astype(np.float64)
    return LatentDiagnostics(
        channel=c,
        latent=y[c],
        mu=mu[c],
        sigma=sigma[c],
        residual=(y[c] - mu[c]) / sigma[c],
        bits=bits[c],
        avg_bits=bits.mean(axis=0),
    )


@dataclass(frozen=True)
class ChannelRate:
    channel: int
    rate_bits: float
    rank: int


def channel_rates(y_hat, params: EntropyParams, gc: GaussianConditional | None = None) -> list[ChannelRate]:
    """Per-channel cost, most expensive first; ties keep the lower channel index first."""
    totals = channel_totals(_bits(y_hat, params, gc))
    order = sorted(range(totals.size), key=lambda c: (-totals[c], c))
    return [ChannelRate(c, float(totals[c]), r) for r, c in enumerate(order)]


# -- impulse responses -----------------------------------------------------------

IMPULSE_CANVAS = 16
IMPULSE_CROP = 64


@dataclass(frozen=True)
class ImpulseResponse:
    channel: int
    amplitude: float
    response: np.ndarray  # (planes, crop, crop)
    baseline: np.ndarray

    @property
    def difference(self) -> np.ndarray:
        return self.response - self.baseline


def _central_crop(x: np.ndarray, size: int) -> np.ndarray:
    _, h, w = x.shape
    t, l = (h - size) // 2, (w - size) // 2
    return x[:, t : t + size, l : l + size]


def impulse_response(bm: BranchModel, channel: int, amplitude: float = 1.0, canvas: int = IMPULSE_CANVAS,
                     crop: int = IMPULSE_CROP, baseline: np.ndarray | None = None) -> ImpulseResponse:
    """Synthesis output for a single latent impulse at the canvas centre.

    The latent is zero except ``amplitude`` at position (canvas/2, canvas/2)
    of ``channel``; the returned patch is the central ``crop`` square of the
    reconstruction, alongside the all-zero-latent baseline.
    """
    M = bm.cfg.M
    if not 0 <= channel < M:
        raise UsageError(f"channel {channel} out of range 0..{M - 1}")
    if crop > canvas * LATENT_STRIDE:
        raise UsageError("crop larger than the synthesised canvas")
    if baseline is None:
        baseline = _central_crop(bm.synthesis(np.zeros((M, canvas, canvas), np.float32)), crop)
    y = np.zeros((M, canvas, canvas), np.float32)
    y[channel, canvas // 2, canvas // 2] = amplitude
    resp = _central_crop(bm.synthesis(y), crop) if amplitude != 0 else baseline.copy()
    return ImpulseResponse(channel, float(amplitude), resp, baseline)


@dataclass(frozen=True)
class ImpulseResponseSet:
    rates: tuple[ChannelRate, ...]
    responses: tuple[ImpulseResponse, ...]

    def __post_init__(self):
        r = [c.rate_bits for c in self.rates]
        if any(b > a for a, b in zip(r, r[1:])):
            raise UsageError("impulse responses must be ordered by decreasing rate")


def impulse_set(bm: BranchModel, rates: list[ChannelRate], amplitude: float = 1.0) -> ImpulseResponseSet:
    ordered = sorted(rates, key=lambda c: c.rank)
    base = impulse_response(bm, 0, 0.0).baseline
    responses = tuple(impulse_response(bm, c.channel, amplitude, baseline=base) for c in ordered)
    return ImpulseResponseSet(tuple(ordered), responses)


# -- export ----------------------------------------------------------------------


def normalize_to_u8(m: np.ndarray) -> tuple[np.ndarray, float, float]:
    m = np.asarray(m, dtype=np.float64)
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        return np.full(m.shape, 128, dtype=np.uint8), lo, hi
    return np.rint((m - lo) / (hi - lo) * 255).astype(np.uint8), lo, hi


def denormalize(u8: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.full(u8.shape, lo)
    return lo + u8.astype(np.float64) / 255 * (hi - lo)


def _export_map(m: np.ndarray, path: Path) -> Path:
    u8, lo, hi = normalize_to_u8(m)
    write_pgm(path, u8)
    try:
        path.with_suffix(".txt").write_text(f"min={lo!r}\nmax={hi!r}\n")
    except OSError as exc:
        raise ImageIOError(f"cannot write {path.with_suffix('.txt')}: {exc}") from exc
    return path


def read_sidecar(path: str | Path) -> tuple[float, float]:
    vals = dict(line.split("=", 1) for line in Path(path).read_text().split())
    return float(vals["min"]), float(vals["max"])


def _ensure_dir(d: str | Path) -> Path:
    d = Path(d)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ImageIOError(f"cannot create {d}: {exc}") from exc
    return d


def export_maps(diag: LatentDiagnostics, directory: str | Path, prefix: str = "") -> list[Path]:
    """Write the six maps as 8-bit PGM, each with a ``.txt`` sidecar holding the true range."""
    d = _ensure_dir(directory)
    return [_export_map(m, d / f"{prefix}{name}.pgm") for name, m in diag.maps().items()]


def write_rate_csv(rates: list[ChannelRate], path: str | Path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["channel", "rate_bits", "rank"])
            for c in sorted(rates, key=lambda c: c.rank):
                w.writerow([c.channel, repr(c.rate_bits), c.rank])
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc


def export_impulses(s: ImpulseResponseSet, directory: str | Path, prefix: str = "") -> list[Path]:
    """One PGM per channel (baseline removed; planes side by side) plus ``rates.csv``."""
    d = _ensure_dir(directory)
    out = []
    for rate, resp in zip(s.rates, s.responses):
        diff = resp.difference
        out.append(_export_map(np.concatenate(list(diff), axis=1), d / f"{prefix}rank{rate.rank:03d}_ch{rate.channel:03d}.pgm"))
    write_rate_csv(list(s.rates), d / f"{prefix}rates.csv")
    return out
