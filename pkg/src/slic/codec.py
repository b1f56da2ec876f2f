"""End-to-end encoder/decoder and the ``SLIC`` bitstream container.

Container layout (little-endian)::

    magic      4 bytes  b"SLIC"
    version    u8
    width      u32      original image width
    height     u32      original image height
    profile    u8       arch_id << 4 | lambda index
    context    u8       0 none, 1 luma only, 2 both
    lengths    4 x u32  z_luma, z_chroma, y_luma, y_chroma
    crc32      4 x u32  CRC-32 of each substream, same order
    substreams          z_luma | z_chroma | y_luma | y_chroma

Each substream is the raw output of one range coder.  Hyperlatents are coded
channel by channel in raster order; latents position by position in raster
order, all channels of a position together, which is the order the
autoregressive decoder needs.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .color import ColorSpace, PlanarImage, merge_yuv, rgb_to_yuv, split_yuv, yuv_to_rgb
from .entropy.coder import RangeDecoder, RangeEncoder
from .entropy.models import EntropyParams, GaussianConditional, estimate_bits, shared_gaussian_conditional
from .errors import ConfigurationError, DecodeError, SlicError, UsageError
from .model import HYPER_STRIDE, BranchModel, ContextMode, SlicModel

MAGIC = b"SLIC"
VERSION = 1
MAX_SIDE = 1 << 16
SUBSTREAMS = ("z_luma", "z_chroma", "y_luma", "y_chroma")
_HEADER = struct.Struct("<4sBIIBB4I4I")
HEADER_SIZE = _HEADER.size


# -- container -----------------------------------------------------------------


@dataclass(frozen=True)
class SlicBitstream:
    width: int
    height: int
    profile: int
    context: int
    substreams: tuple[bytes, bytes, bytes, bytes]
    version: int = VERSION

    def __post_init__(self):
        if not (1 <= self.width <= MAX_SIDE and 1 <= self.height <= MAX_SIDE):
            raise UsageError(f"image size {self.width}x{self.height} outside 1..{MAX_SIDE}")
        if not (0 <= self.profile < 256 and 0 <= self.context < 256):
            raise UsageError("profile and context codes must fit in one byte")
        if len(self.substreams) != 4:
            raise UsageError("a SLIC bitstream carries exactly four substreams")

    def to_bytes(self) -> bytes:
        lengths = [len(s) for s in self.substreams]
        crcs = [zlib.crc32(s) for s in self.substreams]
        head = _HEADER.pack(MAGIC, self.version, self.width, self.height, self.profile, self.context, *lengths, *crcs)
        return head + b"".join(self.substreams)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SlicBitstream":
        if len(data) < HEADER_SIZE:
            raise DecodeError(f"{len(data)} bytes is shorter than the {HEADER_SIZE}-byte header", "header")
        magic, version, width, height, profile, context, *rest = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise DecodeError(f"bad magic {magic!r}", "header")
        if version != VERSION:
            raise DecodeError(f"unsupported version {version}", "header")
        lengths, crcs = rest[:4], rest[4:]
        if sum(lengths) != len(data) - HEADER_SIZE:
            raise DecodeError(
                f"declared substream lengths sum to {sum(lengths)} but {len(data) - HEADER_SIZE} bytes follow",
                "header",
            )
        streams, pos = [], HEADER_SIZE
        for name, n, crc in zip(SUBSTREAMS, lengths, crcs):
            s = bytes(data[pos : pos + n])
            pos += n
            if zlib.crc32(s) != crc:
                raise DecodeError("checksum mismatch", name)
            streams.append(s)
        try:
            return cls(width, height, profile, context, tuple(streams), version)
        except UsageError as exc:
            raise DecodeError(str(exc), "header") from exc

    @property
    def padded_size(self) -> tuple[int, int]:
        return _round_up(self.height), _round_up(self.width)


def _round_up(n: int, multiple: int = HYPER_STRIDE) -> int:
    return -(-n // multiple) * multiple


def profile_byte(arch_id: int, lambda_index: int = 0) -> int:
    if not (0 <= arch_id < 16 and 0 <= lambda_index < 16):
        raise UsageError("arch id and lambda index must each fit in 4 bits")
    return arch_id << 4 | lambda_index


# -- padding -------------------------------------------------------------------


def pad_reflect(img: PlanarImage, multiple: int = HYPER_STRIDE) -> tuple[PlanarImage, tuple[int, int]]:
    """Reflect-pad bottom and right edges up to a multiple of ``multiple``."""
    h, w = img.height, img.width
    ph, pw = _round_up(h, multiple) - h, _round_up(w, multiple) - w
    data = np.pad(img.data, ((0, 0), (0, ph), (0, pw)), mode="reflect") if (ph or pw) else img.data
    return PlanarImage(img.space, data), (h, w)


def crop(img: PlanarImage, size: tuple[int, int]) -> PlanarImage:
    h, w = size
    return PlanarImage(img.space, img.data[:, :h, :w])


# -- latent coding -------------------------------------------------------------


def _positions(h: int, w: int):
    for i in range(h):
        for j in range(w):
            yield i, j


def encode_latents(bm: BranchModel, gamma: np.ndarray, y_hat: np.ndarray, gc: GaussianConditional):
    """Code ``y_hat`` in raster order; returns (bytes, mu, sigma) as used by the coder."""
    m, h, w = y_hat.shape
    enc = RangeEncoder()
    mu = np.empty((m, h, w), dtype=np.float32)
    sigma = np.empty((m, h, w), dtype=np.float32)
    values = y_hat.astype(np.int64)
    if bm.cfg.context_enabled:
        seq = bm.sequential
        padded = seq.padded(y_hat)
        for i, j in _positions(h, w):
            mu[:, i, j], sigma[:, i, j] = seq.at(gamma, padded, i, j)
    else:
        ep = bm.entropy_params(gamma)
        mu[:], sigma[:] = ep.mu, ep.sigma
    centres, keys = gc.quantize_params(mu, sigma)
    for i, j in _positions(h, w):
        gc.encode(enc, values[:, i, j], centres[:, i, j], keys[:, i, j])
    return enc.finish(), mu, sigma


def decode_latents(bm: BranchModel, gamma: np.ndarray, data: bytes, gc: GaussianConditional, name: str) -> np.ndarray:
    """Autoregressive decode; undecoded positions hold NaN so any non-causal read fails loudly."""
    m = bm.cfg.M
    _, h, w = gamma.shape
    dec = RangeDecoder(data, name)
    out = np.empty((m, h, w), dtype=np.float32)
    if bm.cfg.context_enabled:
        seq = bm.sequential
        p = seq.half
        padded = seq.padded(np.full((m, h, w), np.nan))
        for i, j in _positions(h, w):
            mu, sigma = seq.at(gamma, padded, i, j)
            c, k = gc.quantize_params(mu, sigma)
            vals = gc.decode(dec, c, k)
            out[:, i, j] = vals
            padded[:, i + p, j + p] = vals
    else:
        ep = bm.entropy_params(gamma)
        centres, keys = gc.quantize_params(ep.mu, ep.sigma)
        for i, j in _positions(h, w):
            out[:, i, j] = gc.decode(dec, centres[:, i, j], keys[:, i, j])
    dec.finish()
    return out


# -- pipeline ------------------------------------------------------------------


@dataclass
class BranchResult:
    y_hat: np.ndarray
    z_hat: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    z_bytes: bytes
    y_bytes: bytes
    z_bits_estimate: float
    y_bits_estimate: float


@dataclass
class EncodeResult:
    bitstream: SlicBitstream
    data: bytes
    branches: dict[str, BranchResult] = field(default_factory=dict)

    @property
    def num_pixels(self) -> int:
        return self.bitstream.width * self.bitstream.height

    @property
    def bpp(self) -> float:
        return len(self.data) * 8 / self.num_pixels

    @property
    def estimated_bits(self) -> float:
        return sum(b.z_bits_estimate + b.y_bits_estimate for b in self.branches.values())

    def stats(self) -> dict[str, float]:
        """``bpp`` of the whole file and coded bits of each substream."""
        lu, ch = self.branches["luma"], self.branches["chroma"]
        return {
            "bpp": self.bpp,
            "y_bits": len(lu.y_bytes) * 8,
            "uv_bits": len(ch.y_bytes) * 8,
            "zy_bits": len(lu.z_bytes) * 8,
            "zuv_bits": len(ch.z_bytes) * 8,
        }


def _encode_branch(bm: BranchModel, x: np.ndarray, gc: GaussianConditional) -> BranchResult:
    y = bm.analysis(x)
    z = bm.hyper_analysis(y)
    z_hat = np.rint(z)
    z_bytes = bm.prior.encode(z_hat)
    gamma = bm.hyper_synthesis(z_hat)
    y_hat = np.rint(y)
    y_bytes, mu, sigma = encode_latents(bm, gamma, y_hat, gc)
    return BranchResult(
        y_hat.astype(np.int64),
        z_hat.astype(np.int64),
        mu,
        sigma,
        z_bytes,
        y_bytes,
        float(bm.prior.bits(z_hat).sum()),
        estimate_bits(y_hat, EntropyParams(mu, sigma), gc),
    )


def encode(img: PlanarImage, model: SlicModel, lambda_index: int = 0) -> EncodeResult:
    """Compress an RGB image with the context mode baked into ``model``."""
    if img.space is not ColorSpace.RGB:
        raise UsageError(f"encoder expects an RGB image, got {img.space.value}")
    if img.height > MAX_SIDE or img.width > MAX_SIDE:
        raise UsageError(f"image {img.width}x{img.height} exceeds the {MAX_SIDE}-pixel side limit")
    data = img.data
    if not np.all(np.isfinite(data)) or data.min() < 0 or data.max() > 1:
        raise UsageError("RGB values must lie in [0, 1]")
    padded, (h, w) = pad_reflect(img)
    x_l, x_c = split_yuv(rgb_to_yuv(padded))
    gc = shared_gaussian_conditional()
    branches = {
        "luma": _encode_branch(model.luma, x_l.data, gc),
        "chroma": _encode_branch(model.chroma, x_c.data, gc),
    }
    profile = model.graph.profile
    arch = profile.arch_id if profile is not None else 15
    streams = (
        branches["luma"].z_bytes,
        branches["chroma"].z_bytes,
        branches["luma"].y_bytes,
        branches["chroma"].y_bytes,
    )
    bs = SlicBitstream(w, h, profile_byte(arch, lambda_index), model.graph.context_mode.code, streams)
    return EncodeResult(bs, bs.to_bytes(), branches)


@dataclass
class DecodeResult:
    image: PlanarImage
    y_hat: dict[str, np.ndarray]
    z_hat: dict[str, np.ndarray]


def _decode_branch(bm: BranchModel, z_data: bytes, y_data: bytes, shape, gc, names):
    hp, wp = shape
    zn, yn = names
    try:
        z_hat = bm.prior.decode(z_data, (hp // HYPER_STRIDE, wp // HYPER_STRIDE), zn)
    except DecodeError:
        raise
    except (SlicError, ValueError, ArithmeticError) as exc:
        raise DecodeError(str(exc), zn) from exc
    gamma = bm.hyper_synthesis(z_hat.astype(np.float32))
    try:
        y_hat = decode_latents(bm, gamma, y_data, gc, yn)
    except DecodeError:
        raise
    except (SlicError, ValueError, ArithmeticError) as exc:
        raise DecodeError(str(exc), yn) from exc
    return z_hat, y_hat


def decode_full(data: bytes | SlicBitstream, model: SlicModel) -> DecodeResult:
    """Decode and also return the recovered latents."""
    bs = data if isinstance(data, SlicBitstream) else SlicBitstream.from_bytes(data)
    profile = model.graph.profile
    arch = profile.arch_id if profile is not None else 15
    if bs.profile >> 4 != arch:
        raise DecodeError(f"bitstream profile {bs.profile >> 4} does not match model profile {arch}", "header")
    try:
        mode = ContextMode.from_code(bs.context)
    except ValueError as exc:
        raise DecodeError(str(exc), "header") from exc
    if mode != model.graph.context_mode:
        try:
            model = model.with_context(mode)
        except ConfigurationError as exc:
            raise DecodeError(f"weights do not support context mode {mode!r}: {exc}", "header") from exc
    gc = shared_gaussian_conditional()
    shape = bs.padded_size
    z_l, y_l = _decode_branch(model.luma, bs.substreams[0], bs.substreams[2], shape, gc, ("z_luma", "y_luma"))
    z_c, y_c = _decode_branch(model.chroma, bs.substreams[1], bs.substreams[3], shape, gc, ("z_chroma", "y_chroma"))
    x_l = PlanarImage(ColorSpace.LUMA, model.luma.synthesis(y_l))
    x_c = PlanarImage(ColorSpace.CHROMA, model.chroma.synthesis(y_c))
    rgb = yuv_to_rgb(merge_yuv(x_l, x_c))
    return DecodeResult(
        crop(rgb, (bs.height, bs.width)),
        {"luma": y_l.astype(np.int64), "chroma": y_c.astype(np.int64)},
        {"luma": z_l, "chroma": z_c},
    )


def decode(data: bytes | SlicBitstream, model: SlicModel) -> PlanarImage:
    return decode_full(data, model).image
