"""Probability models: Gaussian conditional for latents, factorized prior for hyperlatents.

Both models turn a continuous density into a finite table: every integer bin
whose probability reaches ``BIN_MIN_MASS`` (plus everything between) is kept,
the remaining tail mass is folded into an escape slot that never drops below
``ESCAPE_MIN_MASS``, and the result is quantised to 16-bit frequencies.  Bit
estimates are taken from the same tables, so they track the coded length up to
the range coder's own (tiny) overhead.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit, ndtr

from ..errors import ConfigurationError, DecodeError, UsageError
from .coder import (
    TOTAL,
    CdfTable,
    RangeDecoder,
    RangeEncoder,
    decode_symbol,
    encode_symbol,
    exp_golomb_bits,
    quantize_pmf,
)

SIGMA_MIN = 0.11
SIGMA_MAX = 256.0
NUM_SCALES = 64
MEAN_PHASES = 16
BIN_MIN_MASS = 2.0**-12
ESCAPE_MIN_MASS = 2.0**-10
_MEAN_LIMIT = float(2**24)


def default_scale_table() -> np.ndarray:
    return np.exp(np.linspace(np.log(SIGMA_MIN), np.log(SIGMA_MAX), NUM_SCALES))


def gaussian_cdf_bins(mu, sigma, s) -> np.ndarray:
    """Probability of integer ``s`` under N(mu, sigma²) integrated over [s − ½, s + ½].

    Broadcasts over its arguments.  Bins above the mean are evaluated through
    the upper tail so both sides keep full relative precision.
    """
    mu, sigma, s = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (mu, sigma, s)))
    if np.any(~(sigma > 0)):
        raise UsageError("sigma must be positive")
    d = s - mu
    upper = (d + 0.5) / sigma
    lower = (d - 0.5) / sigma
    right = lower > 0
    return np.where(right, ndtr(-lower) - ndtr(-upper), ndtr(upper) - ndtr(lower))


@dataclass(frozen=True)
class TableRow:
    """One coding table: symbols ``offset .. offset + n - 1`` plus an escape slot."""

    offset: int
    pmf: np.ndarray  # float model probabilities, escape last
    cdf: list[int]

    @property
    def num_symbols(self) -> int:
        return len(self.cdf) - 2

    def code_bits(self) -> np.ndarray:
        """Ideal cost in bits of every slot under the quantised frequencies."""
        freq = np.diff(np.asarray(self.cdf, dtype=np.float64))
        return np.log2(TOTAL) - np.log2(freq)


def _make_row(bins: np.ndarray, offset: int, tail: float) -> TableRow:
    """Trim ``bins`` to the retained support, attach the escape slot, quantise."""
    keep = np.flatnonzero(bins >= BIN_MIN_MASS)
    if keep.size == 0:
        keep = np.array([int(np.argmax(bins))])
    lo, hi = int(keep[0]), int(keep[-1])
    core = bins[lo : hi + 1]
    tail = tail + float(bins[:lo].sum() + bins[hi + 1 :].sum())
    escape = max(tail, ESCAPE_MIN_MASS)
    pmf = np.append(core / core.sum() * (1.0 - escape), escape)
    return TableRow(offset + lo, pmf, quantize_pmf(pmf))


def escape_payload_bits(overflow: np.ndarray) -> np.ndarray:
    """Vectorised :func:`exp_golomb_bits`."""
    v = np.asarray(overflow, dtype=np.int64)
    k = np.floor(np.log2(v + 1.0)).astype(np.int64)
    # floor(log2) can be off by one for huge values; fix exactly.
    k = np.where((1 << (k + 1)) <= v + 1, k + 1, k)
    k = np.where((1 << k) > v + 1, k - 1, k)
    return 2 + 2 * k


def _row_bits(row: TableRow, rel: np.ndarray, slot_bits: np.ndarray) -> np.ndarray:
    idx = rel - row.offset
    n = row.num_symbols
    inside = (idx >= 0) & (idx < n)
    bits = np.empty(rel.shape, dtype=np.float64)
    bits[inside] = slot_bits[idx[inside]]
    out = ~inside
    if out.any():
        over = np.where(idx[out] < 0, -idx[out] - 1, idx[out] - n)
        bits[out] = slot_bits[n] + escape_payload_bits(over)
    return bits


# -- Gaussian conditional ------------------------------------------------------


class GaussianConditional:
    """Discretised Gaussian model with shared tables over (scale level, mean phase).

    ``sigma`` is snapped up to the next entry of a 64-level log-spaced table and
    ``mu`` to a 1/16 grid, so encoder and decoder select identical integer
    tables from float parameters.
    """

    def __init__(self, scale_table: np.ndarray | None = None, phases: int = MEAN_PHASES):
        table = default_scale_table() if scale_table is None else np.asarray(scale_table, dtype=np.float64)
        if table.ndim != 1 or table.size < 1 or np.any(np.diff(table) <= 0) or table[0] <= 0:
            raise ConfigurationError("scale table must be positive and strictly increasing")
        if phases < 1:
            raise ConfigurationError("need at least one mean phase")
        self.scale_table = table
        self.phases = int(phases)
        self._rows: dict[int, TableRow] = {}
        self._slot_bits: dict[int, np.ndarray] = {}

    @property
    def num_keys(self) -> int:
        return self.scale_table.size * self.phases

    def quantize_params(self, mu, sigma) -> tuple[np.ndarray, np.ndarray]:
        """Map float (mu, sigma) to integer (centre, table key)."""
        mu = np.asarray(mu, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        if mu.shape != sigma.shape:
            raise UsageError(f"mu and sigma shapes differ: {mu.shape} vs {sigma.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise UsageError("entropy parameters must be finite")
        m = np.rint(np.clip(mu, -_MEAN_LIMIT, _MEAN_LIMIT) * self.phases).astype(np.int64)
        centre = m // self.phases
        phase = m - centre * self.phases
        sidx = np.minimum(np.searchsorted(self.scale_table, sigma, side="left"), self.scale_table.size - 1)
        return centre, sidx * self.phases + phase

    def row(self, key: int) -> TableRow:
        r = self._rows.get(key)
        if r is None:
            r = self._rows[key] = self._build_row(int(key))
        return r

    def _build_row(self, key: int) -> TableRow:
        sidx, phase = divmod(key, self.phases)
        if not 0 <= sidx < self.scale_table.size:
            raise ConfigurationError(f"table key {key} out of range")
        sigma = float(self.scale_table[sidx])
        frac = phase / self.phases
        reach = int(np.ceil(10 * sigma)) + 2
        rel = np.arange(-reach, reach + 1)
        bins = gaussian_cdf_bins(frac, sigma, rel)
        tail = float(ndtr((-reach - 0.5 - frac) / sigma) + ndtr((-reach - 0.5 + frac) / sigma))
        return _make_row(bins, -reach, tail)

    def encode(self, enc: RangeEncoder, values, centres, keys):
        for v, c, k in zip(np.asarray(values).tolist(), np.asarray(centres).tolist(), np.asarray(keys).tolist()):
            row = self.row(k)
            encode_symbol(enc, v - c, row.cdf, row.offset)

    def decode(self, dec: RangeDecoder, centres, keys) -> list[int]:
        out = []
        for c, k in zip(np.asarray(centres).tolist(), np.asarray(keys).tolist()):
            row = self.row(k)
            out.append(c + decode_symbol(dec, row.cdf, row.offset))
        return out

    def bits(self, values, mu, sigma) -> np.ndarray:
        """Per-element coding cost in bits, same shape as ``values``."""
        values = np.asarray(values)
        centre, keys = self.quantize_params(mu, sigma)
        if values.shape != centre.shape:
            raise UsageError(f"latent shape {values.shape} does not match parameter shape {centre.shape}")
        if np.any(values != np.rint(values)):
            raise UsageError("latents must be integer valued")
        rel = values.astype(np.int64) - centre
        bits = np.empty(values.shape, dtype=np.float64)
        for k in np.unique(keys).tolist():
            sel = keys == k
            sb = self._slot_bits.get(k)
            if sb is None:
                sb = self._slot_bits[k] = self.row(k).code_bits()
            bits[sel] = _row_bits(self.row(k), rel[sel], sb)
        return bits


@dataclass(frozen=True)
class EntropyParams:
    """Per-element Gaussian mean and scale maps of a latent tensor."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if np.shape(self.mu) != np.shape(self.sigma):
            raise UsageError("mu and sigma maps must have the same shape")


@lru_cache(maxsize=None)
def shared_gaussian_conditional() -> GaussianConditional:
    """Process-wide instance with the default tables (rows are built lazily and cached)."""
    return GaussianConditional()


def channel_totals(bits: np.ndarray) -> np.ndarray:
    """Per-channel (first axis) sums of a bit map; totals are always summed from this."""
    bits = np.asarray(bits)
    return bits.reshape(bits.shape[0], -1).sum(axis=1) if bits.ndim > 1 else bits


def estimate_bits(y_hat, params: EntropyParams, model: GaussianConditional | None = None) -> float:
    """Total cost in bits of coding ``y_hat`` under the Gaussian conditional.

    The cost of each element is ``-log2`` of the probability the coder
    actually uses (16-bit table entry; escape slot plus raw payload bits for
    values outside the table).
    """
    model = model or shared_gaussian_conditional()
    return float(channel_totals(model.bits(y_hat, params.mu, params.sigma)).sum())


# -- factorized prior ----------------------------------------------------------

FACTORIZED_FILTERS = (1, 3, 3, 3, 1)
FACTORIZED_REACH = 512


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class FactorizedPriorParams:
    """Per-channel parameters of the monotone cumulative density network.

    For ``K`` stages with widths ``filters``, stage ``k`` stores a raw matrix
    (C, f[k+1], f[k]) passed through softplus, a bias (C, f[k+1]) and, except
    for the last stage, a factor (C, f[k+1]) passed through tanh.
    """

    matrices: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        k = len(self.matrices)
        if k < 1 or len(self.biases) != k or len(self.factors) != k - 1:
            raise ConfigurationError("factorized prior needs K matrices, K biases and K-1 factors")
        c = self.matrices[0].shape[0]
        width = 1
        for i, m in enumerate(self.matrices):
            if m.ndim != 3 or m.shape[0] != c or m.shape[2] != width:
                raise ConfigurationError(f"factorized prior matrix {i} has shape {m.shape}")
            width = m.shape[1]
            if self.biases[i].shape != (c, width):
                raise ConfigurationError(f"factorized prior bias {i} has shape {self.biases[i].shape}")
            if i < k - 1 and self.factors[i].shape != (c, width):
                raise ConfigurationError(f"factorized prior factor {i} has shape {self.factors[i].shape}")
        if width != 1:
            raise ConfigurationError("last factorized prior stage must have width 1")

    @property
    def channels(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def num_params(self) -> int:
        return sum(a.size for a in (*self.matrices, *self.biases, *self.factors))

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Cumulative logits at points ``x`` of shape (C, K)."""
        h = np.asarray(x, dtype=np.float64)[:, None, :]
        last = len(self.matrices) - 1
        for i, m in enumerate(self.matrices):
            h = np.einsum("coi,cik->cok", softplus(m.astype(np.float64)), h)
            h = h + self.biases[i].astype(np.float64)[:, :, None]
            if i < last:
                h = h + np.tanh(self.factors[i].astype(np.float64))[:, :, None] * np.tanh(h)
        return h[:, 0, :]


def _likelihood_from_logits(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    # Evaluate on the side of the median where the sigmoid is far from 1.
    sign = -np.sign(lower + upper)
    sign = np.where(sign == 0, 1.0, sign)
    return np.abs(expit(sign * upper) - expit(sign * lower))


class FactorizedPrior:
    """Per-channel integer tables derived from :class:`FactorizedPriorParams`."""

    def __init__(self, params: FactorizedPriorParams, reach: int = FACTORIZED_REACH):
        self.params = params
        grid = np.arange(-reach, reach + 2, dtype=np.float64) - 0.5  # bin edges
        edges = params.logits(np.broadcast_to(grid, (params.channels, grid.size)))
        if not np.all(np.isfinite(edges)) or np.any(np.diff(edges, axis=1) < 0):
            raise ConfigurationError("factorized prior cumulative is not monotone")
        bins = _likelihood_from_logits(edges[:, :-1], edges[:, 1:])
        tails = expit(edges[:, 0]) + expit(-edges[:, -1])
        self.rows = [_make_row(bins[c], -reach, float(tails[c])) for c in range(params.channels)]
        self.table = CdfTable([r.cdf for r in self.rows], [r.offset for r in self.rows], escape=True)
        self._slot_bits = [r.code_bits() for r in self.rows]

    @property
    def channels(self) -> int:
        return self.params.channels

    def _check(self, z_hat: np.ndarray):
        if z_hat.ndim != 3 or z_hat.shape[0] != self.channels:
            raise UsageError(f"hyperlatent must be ({self.channels}, h, w), got {z_hat.shape}")

    def encode(self, z_hat: np.ndarray) -> bytes:
        """Code channel by channel, raster order inside a channel."""
        z_hat = np.asarray(z_hat)
        self._check(z_hat)
        enc = RangeEncoder()
        for c, row in enumerate(self.rows):
            for v in z_hat[c].astype(np.int64).ravel().tolist():
                encode_symbol(enc, v, row.cdf, row.offset)
        return enc.finish()

    def decode(self, data: bytes, shape: tuple[int, int], name: str | None = None) -> np.ndarray:
        dec = RangeDecoder(data, name)
        h, w = shape
        out = np.empty((self.channels, h * w), dtype=np.int64)
        for c, row in enumerate(self.rows):
            out[c] = [decode_symbol(dec, row.cdf, row.offset) for _ in range(h * w)]
        dec.finish()
        return out.reshape(self.channels, h, w)

    def bits(self, z_hat: np.ndarray) -> np.ndarray:
        z_hat = np.asarray(z_hat)
        self._check(z_hat)
        out = np.empty(z_hat.shape, dtype=np.float64)
        for c, row in enumerate(self.rows):
            out[c] = _row_bits(row, z_hat[c].astype(np.int64), self._slot_bits[c])
        return out


def factorized_prior_cdf(params: FactorizedPriorParams) -> CdfTable:
    return FactorizedPrior(params).table


__all__ = [
    "EntropyParams",
    "FactorizedPrior",
    "FactorizedPriorParams",
    "GaussianConditional",
    "TableRow",
    "estimate_bits",
    "exp_golomb_bits",
    "factorized_prior_cdf",
    "gaussian_cdf_bins",
]
