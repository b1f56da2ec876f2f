"""Forward-only neural network primitives on channel-major 3-D tensors.

A tensor here is simply a ``numpy.ndarray`` of shape ``(C, H, W)`` and dtype
float32.  Convolutions accumulate in float64 and round to float32 on store;
the summation order depends only on the kernel shape, never on the spatial
size, so encoder and decoder reproduce context predictions bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

LEAKY_SLOPE = 0.01
GN_EPS = 1e-5


def as_tensor3(a) -> np.ndarray:
    """Validate ``a`` as a (C, H, W) tensor and return a float32 view/copy."""
    a = np.asarray(a)
    if a.ndim != 3 or min(a.shape) < 1:
        raise ConfigurationError(f"expected a non-empty (C, H, W) tensor, got shape {a.shape}")
    return np.ascontiguousarray(a, dtype=np.float32)


@dataclass(frozen=True)
class ConvSpec:
    """Weights and geometry of one 2-D convolution.

    ``padding=None`` selects "same" padding (``kernel // 2``).
    """

    weight: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int | None = None
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float32)
        if w.ndim != 4:
            raise ConfigurationError(f"conv weight must be 4-D (out, in, kh, kw), got {w.shape}")
        kh, kw = w.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigurationError(f"kernel must have odd size, got {kh}x{kw}")
        if self.stride < 1:
            raise ConfigurationError("stride must be positive")
        object.__setattr__(self, "weight", w)
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float32).reshape(-1)
            if b.shape[0] != w.shape[0]:
                raise ConfigurationError(
                    f"bias length {b.shape[0]} does not match {w.shape[0]} output channels"
                )
            object.__setattr__(self, "bias", b)
        if self.padding is None:
            object.__setattr__(self, "padding", kh // 2)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        p, s = self.padding, self.stride
        return (h + 2 * p - kh) // s + 1, (w + 2 * p - kw) // s + 1


def conv2d(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Zero-padded cross-correlation, PyTorch ``Conv2d`` semantics."""
    x = as_tensor3(x)
    cin, h, w = x.shape
    if cin != spec.in_channels:
        raise ConfigurationError(
            f"conv expects {spec.in_channels} input channels, got {cin}"
        )
    kh, kw = spec.kernel
    p, s = spec.padding, spec.stride
    ho, wo = spec.output_size(h, w)
    if ho < 1 or wo < 1:
        raise ConfigurationError(
            f"input {h}x{w} is smaller than the {kh}x{kw} kernel after padding"
        )
    xp = np.pad(x.astype(np.float64), ((0, 0), (p, p), (p, p)))
    # Tap-major contiguous weights: matmul only dispatches to BLAS for contiguous operands.
    w64 = np.ascontiguousarray(spec.weight.astype(np.float64).transpose(2, 3, 0, 1))
    out = np.zeros((spec.out_channels, ho * wo))
    for i in range(kh):
        for j in range(kw):
            tap = w64[i, j]
            if not tap.any():
                continue
            patch = xp[:, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s]
            out += tap @ np.ascontiguousarray(patch).reshape(cin, -1)
    if spec.bias is not None:
        out += spec.bias.astype(np.float64)[:, None]
    return out.reshape(spec.out_channels, ho, wo).astype(np.float32)


def causal_mask(kh: int, kw: int) -> np.ndarray:
    """Type-A mask: 1 strictly before the kernel centre in raster order."""
    mask = np.zeros((kh, kw), dtype=np.float32)
    ch, cw = kh // 2, kw // 2
    mask[:ch, :] = 1
    mask[ch, :cw] = 1
    return mask


def mask_spec(spec: ConvSpec) -> ConvSpec:
    """Return ``spec`` with its weights multiplied by the type-A mask."""
    kh, kw = spec.kernel
    weight = spec.weight * causal_mask(kh, kw)
    return ConvSpec(weight, spec.bias, spec.stride, spec.padding)


def masked_conv2d(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Causal convolution: output (i, j) only sees inputs earlier in raster order."""
    if spec.stride != 1:
        raise ConfigurationError("masked convolution must have stride 1")
    return conv2d(x, mask_spec(spec))


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Rearrange (C*r*r, H, W) into (C, H*r, W*r), PyTorch ordering."""
    c, h, w = x.shape
    if c % (r * r):
        raise ConfigurationError(f"{c} channels are not divisible by upscale^2 = {r * r}")
    out = x.reshape(c // (r * r), r, r, h, w).transpose(0, 3, 1, 4, 2)
    return np.ascontiguousarray(out.reshape(c // (r * r), h * r, w * r))


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    c, h, w = x.shape
    out = x.reshape(c, h // r, r, w // r, r).transpose(0, 2, 4, 1, 3)
    return np.ascontiguousarray(out.reshape(c * r * r, h // r, w // r))


def subpixel_conv(x: np.ndarray, spec: ConvSpec, upscale: int) -> np.ndarray:
    """Convolution in low-resolution space followed by a pixel shuffle."""
    if spec.out_channels % (upscale * upscale):
        raise ConfigurationError(
            f"{spec.out_channels} output channels are not divisible by {upscale}^2"
        )
    return pixel_shuffle(conv2d(x, spec), upscale)


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.maximum(x, np.float32(slope) * x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return (1.0 / (1.0 + np.exp(-x.astype(np.float64)))).astype(np.float32)


@dataclass(frozen=True)
class ShuffleAttentionParams:
    """Learnable vectors of one shuffle attention block.

    Every vector has length ``C // (2 * groups)`` and is shared by all groups,
    which gives ``3 * C / groups`` parameters in total.
    """

    cweight: np.ndarray
    cbias: np.ndarray
    sweight: np.ndarray
    sbias: np.ndarray
    gn_weight: np.ndarray
    gn_bias: np.ndarray

    @classmethod
    def zeros(cls, half_group: int) -> "ShuffleAttentionParams":
        z = np.zeros(half_group, dtype=np.float32)
        return cls(z, z, z, z, z, z)

    def vectors(self) -> tuple[np.ndarray, ...]:
        return (self.cweight, self.cbias, self.sweight, self.sbias, self.gn_weight, self.gn_bias)

    @property
    def num_params(self) -> int:
        return sum(v.size for v in self.vectors())


def shuffle_attention_param_count(channels: int, groups: int) -> int:
    if channels % (2 * groups):
        raise ConfigurationError(f"{channels} channels not divisible by 2*{groups}")
    return 3 * channels // groups


def channel_shuffle(x: np.ndarray, groups: int) -> np.ndarray:
    c, h, w = x.shape
    if c % groups:
        raise ConfigurationError(f"{c} channels not divisible into {groups} groups")
    return np.ascontiguousarray(x.reshape(groups, c // groups, h, w).transpose(1, 0, 2, 3).reshape(c, h, w))


def channel_unshuffle(x: np.ndarray, groups: int) -> np.ndarray:
    """Inverse of :func:`channel_shuffle` with the same ``groups``."""
    return channel_shuffle(x, x.shape[0] // groups)


def shuffle_attention(x: np.ndarray, params: ShuffleAttentionParams, groups: int) -> np.ndarray:
    """Grouped channel/spatial gating followed by a 2-way channel shuffle."""
    x = as_tensor3(x)
    c, h, w = x.shape
    if c % (2 * groups):
        raise ConfigurationError(f"{c} channels not divisible by 2*{groups}")
    half = c // (2 * groups)
    for v in params.vectors():
        if v.shape != (half,):
            raise ConfigurationError(f"shuffle attention vectors must have length {half}")
    col = lambda v: v.astype(np.float32)[None, :, None, None]  # noqa: E731

    xg = x.reshape(groups, 2 * half, h, w)
    x0, x1 = xg[:, :half], xg[:, half:]

    pooled = x0.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(np.float32)
    x0 = x0 * _sigmoid(col(params.cweight) * pooled + col(params.cbias))

    mean = x1.mean(axis=(2, 3), keepdims=True, dtype=np.float64)
    var = x1.var(axis=(2, 3), keepdims=True, dtype=np.float64)
    normed = ((x1 - mean) / np.sqrt(var + GN_EPS)).astype(np.float32)
    normed = normed * col(params.gn_weight) + col(params.gn_bias)
    x1 = x1 * _sigmoid(col(params.sweight) * normed + col(params.sbias))

    out = np.concatenate([x0, x1], axis=1).reshape(c, h, w)
    return channel_shuffle(out, 2)


def residual_block(x, conv1: ConvSpec, conv2: ConvSpec, skip: ConvSpec | None = None):
    """Two 3x3 convolutions with activations plus an identity or 1x1 shortcut."""
    out = leaky_relu(conv2d(leaky_relu(conv2d(x, conv1)), conv2))
    identity = conv2d(x, skip) if skip is not None else as_tensor3(x)
    return out + identity


def residual_block_down(x, conv1: ConvSpec, conv2: ConvSpec, skip: ConvSpec):
    """Stride-2 main path with a strided 1x1 shortcut; halves H and W (ceil)."""
    if conv1.stride != 2 or skip.stride != 2:
        raise ConfigurationError("downsampling block needs stride-2 main and shortcut convolutions")
    out = conv2d(leaky_relu(conv2d(x, conv1)), conv2)
    return out + conv2d(x, skip)


def residual_block_up(x, subpel: ConvSpec, conv: ConvSpec, skip: ConvSpec, upscale: int = 2):
    """Sub-pixel main path with a sub-pixel shortcut; doubles H and W."""
    out = conv2d(leaky_relu(subpixel_conv(x, subpel, upscale)), conv)
    return out + subpixel_conv(x, skip, upscale)


def residual_block_updown(x, direction: str, specs: dict[str, ConvSpec]):
    """Dispatch to the down or up residual block.

    ``specs`` holds ``conv1``/``conv2``/``skip`` for "down" and
    ``subpel``/``conv``/``skip`` for "up".
    """
    if direction == "down":
        return residual_block_down(x, specs["conv1"], specs["conv2"], specs["skip"])
    if direction == "up":
        return residual_block_up(x, specs["subpel"], specs["conv"], specs["skip"])
    raise ConfigurationError(f"direction must be 'up' or 'down', got {direction!r}")


def avg_pool(x: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping box average; H and W must be divisible by ``factor``."""
    c, h, w = x.shape
    if h % factor or w % factor:
        raise ConfigurationError(f"{h}x{w} is not divisible by pooling factor {factor}")
    if factor == 1:
        return x
    v = x.reshape(c, h // factor, factor, w // factor, factor)
    return v.mean(axis=(2, 4), dtype=np.float64).astype(np.float32)
