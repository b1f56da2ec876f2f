"""Bjøntegaard delta rate / delta quality between rate-distortion curves.

Both quantities use the classic formulation: a least-squares cubic is fitted
to each curve (log10 rate against quality for BD-rate, quality against log10
rate for BD-quality) and the fitted polynomials are integrated exactly over
the interval the two curves share.
"""

from __future__ import annotations

import csv
import enum
import io
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ComputationError

MIN_POINTS = 4


class Metric(enum.Enum):
    PSNR_DB = "psnr"
    MSSSIM_DB = "msssim_db"
    INV_CIEDE2000 = "inv_ciede"
    # Raw ΔE00 series as read off a figure; convert with invert_ciede_curve.
    CIEDE2000 = "ciede2000"

    @classmethod
    def parse(cls, text: str) -> "Metric":
        for m in cls:
            if text.lower() in (m.value, m.name.lower()):
                return m
        raise ValueError(f"unknown metric {text!r}")


@dataclass(frozen=True)
class RDPoint:
    rate_bpp: float
    quality: float

    def __post_init__(self):
        if not self.rate_bpp > 0:
            raise ValueError(f"rate must be positive, got {self.rate_bpp}")


@dataclass(frozen=True)
class RDCurve:
    label: str
    metric: Metric
    points: tuple[RDPoint, ...]

    def __post_init__(self):
        pts = tuple(sorted(self.points, key=lambda p: p.rate_bpp))
        rates = [p.rate_bpp for p in pts]
        if len(set(rates)) != len(rates):
            raise ValueError(f"curve {self.label!r} has duplicate rates")
        object.__setattr__(self, "points", pts)
        q = [p.quality for p in pts]
        better_is_lower = self.metric is Metric.CIEDE2000
        if any((b > a) if better_is_lower else (b < a) for a, b in zip(q, q[1:])):
            warnings.warn(f"curve {self.label!r}: quality is not monotone in rate", stacklevel=2)

    @classmethod
    def from_pairs(cls, label: str, metric: Metric, pairs: Iterable[tuple[float, float]]) -> "RDCurve":
        return cls(label, metric, tuple(RDPoint(float(r), float(q)) for r, q in pairs))

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate_bpp for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])

    def scaled_rates(self, factor: float) -> "RDCurve":
        return RDCurve.from_pairs(self.label, self.metric, ((p.rate_bpp * factor, p.quality) for p in self.points))


def invert_ciede_curve(points: Iterable[tuple[float, float]], label: str = "") -> RDCurve:
    """Turn (rate, ΔE00) pairs into a higher-is-better 1/ΔE00 curve."""
    pairs = []
    for rate, de in points:
        if de <= 0:
            raise ComputationError(f"ΔE00 must be positive to invert, got {de}")
        pairs.append((rate, 1.0 / de))
    return RDCurve.from_pairs(label, Metric.INV_CIEDE2000, pairs)


def _as_quality_curve(curve: RDCurve) -> RDCurve:
    if curve.metric is Metric.CIEDE2000:
        return invert_ciede_curve(((p.rate_bpp, p.quality) for p in curve.points), curve.label)
    return curve


def _check_pair(reference: RDCurve, test: RDCurve) -> tuple[RDCurve, RDCurve]:
    reference, test = _as_quality_curve(reference), _as_quality_curve(test)
    if reference.metric is not test.metric:
        raise ComputationError(
            f"curves use different metrics: {reference.metric.value} vs {test.metric.value}"
        )
    for c in (reference, test):
        if len(c.points) < MIN_POINTS:
            raise ComputationError(
                f"curve {c.label!r} has {len(c.points)} points; BD needs at least {MIN_POINTS}"
            )
    return reference, test


def _mean_difference(x1, y1, x2, y2) -> float:
    """Average of fit2 − fit1 over the shared x interval of the two cubic fits."""
    lo = max(x1.min(), x2.min())
    hi = min(x1.max(), x2.max())
    if not hi > lo:
        raise ComputationError("RD curves do not overlap")
    p1 = np.polyint(np.polyfit(x1, y1, 3))
    p2 = np.polyint(np.polyfit(x2, y2, 3))
    area1 = np.polyval(p1, hi) - np.polyval(p1, lo)
    area2 = np.polyval(p2, hi) - np.polyval(p2, lo)
    return float((area2 - area1) / (hi - lo))


def bd_rate(reference: RDCurve, test: RDCurve) -> float:
    """Average bitrate change of ``test`` w.r.t. ``reference`` in percent.

    Negative values mean the test codec needs fewer bits for equal quality.
    """
    reference, test = _check_pair(reference, test)
    diff = _mean_difference(
        reference.qualities, np.log10(reference.rates), test.qualities, np.log10(test.rates)
    )
    return (10**diff - 1) * 100


def bd_quality(reference: RDCurve, test: RDCurve) -> float:
    """Average quality difference (test − reference) at equal rate."""
    reference, test = _check_pair(reference, test)
    return _mean_difference(
        np.log10(reference.rates), reference.qualities, np.log10(test.rates), test.qualities
    )


# -- fixture CSV ---------------------------------------------------------------

CSV_HEADER = ("label", "metric", "rate_bpp", "quality")


def read_curves(source: str | Path | io.TextIOBase) -> dict[tuple[str, Metric], RDCurve]:
    """Parse a ``label,metric,rate_bpp,quality`` CSV into curves keyed by (label, metric)."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_curves(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise ValueError(f"fixture CSV must start with header {','.join(CSV_HEADER)}")
    grouped: dict[tuple[str, Metric], list[tuple[float, float]]] = {}
    for row in reader:
        if not row or not "".join(row).strip():
            continue
        label, metric, rate, quality = (f.strip() for f in row)
        grouped.setdefault((label, Metric.parse(metric)), []).append((float(rate), float(quality)))
    return {key: RDCurve.from_pairs(key[0], key[1], pts) for key, pts in grouped.items()}


def write_curves(curves: Iterable[RDCurve], dest: str | Path) -> None:
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for c in curves:
            for p in c.points:
                w.writerow([c.label, c.metric.value, repr(p.rate_bpp), repr(p.quality)])


def fixture_path(name: str) -> Path:
    """Path of a CSV shipped in the package ``fixtures`` directory."""
    return Path(str(resources.files("slic") / "fixtures" / name))


def load_fixture(name: str) -> dict[tuple[str, Metric], RDCurve]:
    return read_curves(fixture_path(name))
