"""32-bit range coder with 16-bit cumulative frequency tables.

The encoder follows the carry-propagating LZMA design (33-bit ``low`` with a
cached byte plus a run of pending 0xFF bytes).  The leading byte, which is
always zero, is not emitted, so the decoder consumes exactly the bytes written.

Symbols outside a table's range go through an escape slot (the last entry of
an escape-enabled table) followed by a sign bit and an order-0 Exp-Golomb
code of the overflow, written as raw equiprobable bits.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError, DecodeError

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_MAX_EG_PREFIX = 48


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            temp = self._cache
            while True:
                self._out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if not self._cache_size:
                    break
            self._cache = (self.low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def encode(self, start: int, freq: int, precision: int = PRECISION):
        """Narrow the interval to ``[start, start + freq) / 2**precision``."""
        r = self.range >> precision
        self.low += r * start
        self.range = r * freq
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bits(self, value: int, nbits: int):
        """Write ``nbits`` raw bits (each costs exactly one bit)."""
        while nbits > 0:
            n = min(nbits, PRECISION)
            nbits -= n
            self.encode((value >> nbits) & ((1 << n) - 1), 1, n)

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        if self._out[0] != 0:  # pragma: no cover - guaranteed by the interval invariant
            raise AssertionError("range coder produced a non-zero leading byte")
        return bytes(self._out[1:])


class RangeDecoder:
    def __init__(self, data: bytes, name: str | None = None):
        self.data = bytes(data)
        self.name = name
        if len(self.data) < 4:
            raise DecodeError("stream shorter than the 4-byte coder preamble", name)
        self.code = int.from_bytes(self.data[:4], "big")
        self.pos = 4
        self.range = _MASK32
        self._r = 0

    def _normalize(self):
        while self.range < _TOP:
            if self.pos >= len(self.data):
                raise DecodeError("stream truncated", self.name)
            self.code = ((self.code << 8) | self.data[self.pos]) & _MASK32
            self.pos += 1
            self.range <<= 8

    def target(self, precision: int = PRECISION) -> int:
        self._r = self.range >> precision
        v = self.code // self._r
        if v >= 1 << precision:
            raise DecodeError("coder desynchronised (target out of range)", self.name)
        return v

    def consume(self, start: int, freq: int):
        self.code -= start * self._r
        self.range = self._r * freq
        self._normalize()

    def decode_bits(self, nbits: int) -> int:
        value = 0
        while nbits > 0:
            n = min(nbits, PRECISION)
            nbits -= n
            v = self.target(n)
            self.consume(v, 1)
            value = (value << n) | v
        return value

    def finish(self):
        """Check that the whole stream was consumed."""
        if self.pos != len(self.data):
            raise DecodeError(
                f"{len(self.data) - self.pos} trailing bytes after the last symbol", self.name
            )


def quantize_pmf(pmf: np.ndarray, precision: int = PRECISION) -> list[int]:
    """Round a probability vector to integer frequencies summing to 2**precision.

    Every entry keeps a frequency of at least one; the rounding surplus or
    deficit is settled on the most probable entries.  Returns the cumulative
    table (length ``len(pmf) + 1``).
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    total = 1 << precision
    if pmf.ndim != 1 or pmf.size == 0 or pmf.size > total:
        raise ConfigurationError(f"cannot quantise a pmf with {pmf.size} entries to {precision} bits")
    if not np.all(np.isfinite(pmf)) or np.any(pmf < 0):
        raise ConfigurationError("pmf has negative or non-finite entries")
    s = pmf.sum()
    if s <= 0:
        raise ConfigurationError("pmf has no mass")
    freq = np.maximum(np.floor(pmf / s * total + 0.5).astype(np.int64), 1)
    diff = total - int(freq.sum())
    if diff > 0:
        freq[int(np.argmax(freq))] += diff
    while diff < 0:
        order = np.argsort(-freq, kind="stable")
        for i in order:
            if diff == 0 or freq[i] <= 1:
                break
            take = min(-diff, int(freq[i]) - 1, max(1, int(freq[i]) // 4))
            freq[i] -= take
            diff += take
    cdf = [0]
    for f in freq.tolist():
        cdf.append(cdf[-1] + f)
    return cdf


def check_cdf(cdf: Sequence[int], precision: int = PRECISION):
    if len(cdf) < 2 or cdf[0] != 0 or cdf[-1] != 1 << precision:
        raise ConfigurationError("cdf must run from 0 to 2**precision")
    if any(b <= a for a, b in zip(cdf, cdf[1:])):
        raise ConfigurationError("cdf must be strictly increasing")


def exp_golomb_bits(v: int) -> int:
    """Bits used by the escape payload (sign + order-0 Exp-Golomb) for overflow ``v``."""
    k = (v + 1).bit_length() - 1
    return 1 + 2 * k + 1


def encode_symbol(enc: RangeEncoder, value: int, cdf: Sequence[int], offset: int, escape: bool = True):
    n = len(cdf) - 1
    nsym = n - 1 if escape else n
    idx = value - offset
    if 0 <= idx < nsym:
        enc.encode(cdf[idx], cdf[idx + 1] - cdf[idx])
        return
    if not escape:
        raise ConfigurationError(f"symbol {value} outside table range [{offset}, {offset + nsym})")
    enc.encode(cdf[n - 1], cdf[n] - cdf[n - 1])
    if idx < 0:
        sign, v = 1, -idx - 1
    else:
        sign, v = 0, idx - nsym
    enc.encode_bits(sign, 1)
    k = (v + 1).bit_length() - 1
    for _ in range(k):
        enc.encode_bits(1, 1)
    enc.encode_bits(0, 1)
    enc.encode_bits(v + 1 - (1 << k), k)


def decode_symbol(dec: RangeDecoder, cdf: Sequence[int], offset: int, escape: bool = True) -> int:
    n = len(cdf) - 1
    t = dec.target()
    idx = bisect_right(cdf, t) - 1
    dec.consume(cdf[idx], cdf[idx + 1] - cdf[idx])
    if not escape or idx < n - 1:
        return offset + idx
    nsym = n - 1
    sign = dec.decode_bits(1)
    k = 0
    while dec.decode_bits(1):
        k += 1
        if k > _MAX_EG_PREFIX:
            raise DecodeError("escape code prefix too long", dec.name)
    v = (1 << k) - 1 + dec.decode_bits(k)
    return offset - 1 - v if sign else offset + nsym + v


@dataclass
class CdfTable:
    """A set of quantised CDF rows.

    Attributes:
        cdfs: cumulative frequency lists, each from 0 to 2**16.
        offsets: smallest symbol value represented by each row.
        escape: whether the last slot of every row is the escape symbol.
    """

    cdfs: list[list[int]]
    offsets: list[int]
    escape: bool = True

    def __post_init__(self):
        if len(self.cdfs) != len(self.offsets):
            raise ConfigurationError("cdfs and offsets differ in length")
        for cdf in self.cdfs:
            check_cdf(cdf)
            if self.escape and len(cdf) < 3:
                raise ConfigurationError("escape-enabled rows need at least one regular symbol")

    @classmethod
    def from_pmfs(cls, pmfs: Sequence[np.ndarray], offsets: Sequence[int], escape: bool = True) -> "CdfTable":
        return cls([quantize_pmf(p) for p in pmfs], list(offsets), escape)

    def __len__(self):
        return len(self.cdfs)


def range_encode(symbols: Sequence[int], table: CdfTable, indexes: Sequence[int] | None = None) -> bytes:
    """Encode ``symbols[i]`` with row ``indexes[i]`` of ``table`` (row 0 if omitted)."""
    enc = RangeEncoder()
    if indexes is None:
        indexes = [0] * len(symbols)
    if len(indexes) != len(symbols):
        raise ConfigurationError("one table index per symbol is required")
    for s, i in zip(symbols, indexes):
        encode_symbol(enc, int(s), table.cdfs[i], table.offsets[i], table.escape)
    return enc.finish()


def range_decode(data: bytes, table: CdfTable, indexes: Sequence[int] | int, name: str | None = None) -> list[int]:
    """Inverse of :func:`range_encode`; ``indexes`` may be a plain symbol count."""
    if isinstance(indexes, int):
        indexes = [0] * indexes
    dec = RangeDecoder(data, name)
    out = [decode_symbol(dec, table.cdfs[i], table.offsets[i], table.escape) for i in indexes]
    dec.finish()
    return out
