"""The SLIC network graph: two independent branches (luma and chroma).

Every branch is described once as a flat list of :class:`LayerDecl` records.
Weight initialisation, validation, parameter/MAC accounting and the forward
passes all read that same list, so the bookkeeping cannot drift from the code
that runs.

Per-branch layout, resolutions relative to the (padded) input:

* ``g_a``: four stride-2 residual down stages (/2, /4, /8, /16) with extra
  residual blocks, shuffle attention after stages 2 and 4; the outputs of
  stages 1-3 are average-pooled to /16, projected by 1x1 convolutions,
  concatenated with stage 4 and fused into ``M`` latent channels.
* ``g_s``: three residual up blocks (/16 to /2), a residual block, shuffle
  attention after the first up block and after the residual block, and a
  final sub-pixel convolution to full resolution.
* ``h_a``: four 3x3 convolutions, two of them stride 2 (/16 to /64).
* ``h_s``: two sub-pixel convolutions (/64 to /16) and a 3x3 convolution to
  ``2M`` channels (gamma).
* context model: one 5x5 type-A masked convolution ``M -> 2M`` (tau).
* entropy parameters: three 1x1 convolutions ``4M -> 2M`` (mu, sigma); with
  the context model disabled the input is gamma alone (``2M``).
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable

import numpy as np

from .entropy.models import (
    FACTORIZED_FILTERS,
    SIGMA_MAX,
    SIGMA_MIN,
    EntropyParams,
    FactorizedPrior,
    FactorizedPriorParams,
)
from .errors import ConfigurationError, UsageError
from .tensor_nn import (
    LEAKY_SLOPE,
    ConvSpec,
    ShuffleAttentionParams,
    as_tensor3,
    avg_pool,
    causal_mask,
    conv2d,
    leaky_relu,
    masked_conv2d,
    residual_block,
    residual_block_down,
    residual_block_up,
    shuffle_attention,
    shuffle_attention_param_count,
    subpixel_conv,
)

LATENT_STRIDE = 16
HYPER_STRIDE = 64
CONTEXT_KERNEL = 5
_LOG_SIGMA_RANGE = math.log(SIGMA_MAX / SIGMA_MIN)


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class BranchConfig:
    """Widths of one branch.

    Attributes:
        name: ``"luma"`` or ``"chroma"``; prefixes every layer path.
        input_channels: 1 for Y, 2 for UV.
        N: internal width of the transforms.
        M: latent channels.
        hyper_channels: hyperlatent channels.
        context_enabled: whether the masked context model feeds the entropy parameters.
        sa_groups: shuffle attention groups.
        ga_res_blocks: extra residual blocks after each of the four down stages.
    """

    name: str
    input_channels: int
    N: int = 128
    M: int = 128
    hyper_channels: int = 96
    context_enabled: bool = True
    sa_groups: int = 8
    ga_res_blocks: tuple[int, int, int, int] = (2, 1, 0, 1)

    def __post_init__(self):
        if self.input_channels not in (1, 2):
            raise ConfigurationError("branch input must have 1 (luma) or 2 (chroma) channels")
        if min(self.N, self.M, self.hyper_channels) < 1:
            raise ConfigurationError("branch widths must be positive")
        if self.N % (2 * self.sa_groups):
            raise ConfigurationError(f"N={self.N} is not divisible by 2*{self.sa_groups} shuffle attention groups")
        if len(self.ga_res_blocks) != 4 or min(self.ga_res_blocks) < 0:
            raise ConfigurationError("ga_res_blocks needs four non-negative counts")
        if self.ep_widths[1] < 1:
            raise ConfigurationError("M is too small for the entropy parameter network")

    @property
    def ep_widths(self) -> tuple[int, int, int, int]:
        """Channel widths through the entropy parameter network."""
        cin = 4 * self.M if self.context_enabled else 2 * self.M
        return cin, self.M * 10 // 3, self.M * 8 // 3, 2 * self.M


@dataclass(frozen=True)
class Profile:
    """Named architecture preset; its id is stored in the bitstream header."""

    arch_id: int
    name: str
    N: int
    M: int
    hyper_channels: int
    sa_groups: int = 8

    def branches(self, context: "ContextMode") -> tuple[BranchConfig, BranchConfig]:
        kw = dict(N=self.N, M=self.M, hyper_channels=self.hyper_channels, sa_groups=self.sa_groups)
        return (
            BranchConfig("luma", 1, context_enabled=context.luma, **kw),
            BranchConfig("chroma", 2, context_enabled=context.chroma, **kw),
        )


PROFILES = {
    "canonical": Profile(0, "canonical", N=128, M=128, hyper_channels=96),
    # Small widths for fast tests; same topology.
    "tiny": Profile(1, "tiny", N=16, M=16, hyper_channels=16),
}


def get_profile(name_or_id: str | int) -> Profile:
    for p in PROFILES.values():
        if name_or_id in (p.name, p.arch_id) or str(name_or_id) == str(p.arch_id):
            return p
    raise UsageError(f"unknown profile {name_or_id!r}; choose from {sorted(PROFILES)}")


class ContextMode:
    """Which branches use the autoregressive context model."""

    NONE = "none"
    LUMA = "luma"
    BOTH = "both"
    _CODES = {NONE: 0, LUMA: 1, BOTH: 2}

    def __init__(self, mode: str = BOTH):
        if mode not in self._CODES:
            raise UsageError(f"context mode must be one of {list(self._CODES)}, got {mode!r}")
        self.mode = mode

    @classmethod
    def from_code(cls, code: int) -> "ContextMode":
        for k, v in cls._CODES.items():
            if v == code:
                return cls(k)
        raise ValueError(f"unknown context mode code {code}")

    @property
    def code(self) -> int:
        return self._CODES[self.mode]

    @property
    def luma(self) -> bool:
        return self.mode in (self.LUMA, self.BOTH)

    @property
    def chroma(self) -> bool:
        return self.mode == self.BOTH

    def __eq__(self, other):
        return isinstance(other, ContextMode) and other.mode == self.mode

    def __hash__(self):
        return hash(self.mode)

    def __repr__(self):
        return f"ContextMode({self.mode!r})"


# -- layer declarations ----------------------------------------------------------


@dataclass(frozen=True)
class LayerDecl:
    """One learnable layer.

    ``scale`` is the resolution at which the convolution itself runs, as a
    fraction of the input resolution (for sub-pixel convolutions that is the
    low-resolution side).  Kinds: ``conv``, ``masked`` (counted as a full
    kernel), ``sa`` (shuffle attention vectors) and ``prior`` (factorized
    prior, no MACs).
    """

    path: str
    kind: str
    cin: int = 0
    cout: int = 0
    kernel: int = 1
    stride: int = 1
    scale: Fraction = Fraction(1)
    gain: float = 1.0
    sa_groups: int = 0

    @property
    def block(self) -> str:
        if self.kind in ("sa", "prior"):
            return self.path
        return self.path.rsplit("/", 1)[0]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        if self.kind in ("conv", "masked"):
            return {
                f"{self.path}.weight": (self.cout, self.cin, self.kernel, self.kernel),
                f"{self.path}.bias": (self.cout,),
            }
        if self.kind == "sa":
            half = self.cin // (2 * self.sa_groups)
            return {f"{self.path}.{n}": (half,) for n in _SA_FIELDS}
        if self.kind == "prior":
            shapes = {}
            f = FACTORIZED_FILTERS
            for i in range(len(f) - 1):
                shapes[f"{self.path}.matrix{i}"] = (self.cin, f[i + 1], f[i])
                shapes[f"{self.path}.bias{i}"] = (self.cin, f[i + 1])
                if i < len(f) - 2:
                    shapes[f"{self.path}.factor{i}"] = (self.cin, f[i + 1])
            return shapes
        raise ConfigurationError(f"unknown layer kind {self.kind}")

    @property
    def num_params(self) -> int:
        return sum(math.prod(s) for s in self.shapes().values())

    @property
    def macs_per_pixel(self) -> Fraction:
        if self.kind not in ("conv", "masked"):
            return Fraction(0)
        return self.cin * self.cout * self.kernel**2 * self.scale**2


# Output gains of the seeded stand-in weights: keep latents within a few units
# and spread the predicted scales over the table instead of saturating it.
_LATENT_GAIN = 0.25
_EP_OUT_GAIN = 0.1

_SA_FIELDS = ("cweight", "cbias", "sweight", "sbias", "gn_weight", "gn_bias")
_F = Fraction


def _conv(path, cin, cout, k, scale, stride=1, gain=1.0):
    return LayerDecl(path, "conv", cin, cout, k, stride, _F(scale), gain)


def _res_block(p, cin, cout, scale):
    out = [_conv(f"{p}/conv1", cin, cout, 3, scale), _conv(f"{p}/conv2", cout, cout, 3, scale)]
    if cin != cout:
        out.append(_conv(f"{p}/skip", cin, cout, 1, scale, gain=0.0))
    return out


def _down_block(p, cin, cout, scale_out):
    return [
        _conv(f"{p}/conv1", cin, cout, 3, scale_out, stride=2),
        _conv(f"{p}/conv2", cout, cout, 3, scale_out),
        _conv(f"{p}/skip", cin, cout, 1, scale_out, stride=2),
    ]


def _up_block(p, cin, cout, scale_in):
    return [
        _conv(f"{p}/subpel", cin, 4 * cout, 3, scale_in),
        _conv(f"{p}/conv", cout, cout, 3, scale_in * 2),
        _conv(f"{p}/skip", cin, 4 * cout, 1, scale_in),
    ]


def _sa(p, c, groups):
    return LayerDecl(p, "sa", cin=c, cout=c, sa_groups=groups)


def branch_layers(cfg: BranchConfig) -> list[LayerDecl]:
    b, N, M, Nh, G = cfg.name, cfg.N, cfg.M, cfg.hyper_channels, cfg.sa_groups
    layers: list[LayerDecl] = []
    cin = cfg.input_channels
    for s in range(4):
        scale = _F(1, 2 ** (s + 1))
        p = f"{b}/g_a/stage{s + 1}"
        layers += _down_block(f"{p}/down", cin, N, scale)
        for r in range(cfg.ga_res_blocks[s]):
            layers += _res_block(f"{p}/res{r + 1}", N, N, scale)
        if s in (1, 3):
            layers.append(_sa(f"{p}/sa", N, G))
        cin = N
    for t in range(3):
        layers.append(_conv(f"{b}/g_a/taps/proj{t + 1}", N, N, 1, _F(1, 16)))
    layers.append(_conv(f"{b}/g_a/taps/fuse", 4 * N, M, 1, _F(1, 16), gain=_LATENT_GAIN))

    layers += [
        _conv(f"{b}/h_a/conv1", M, Nh, 3, _F(1, 16)),
        _conv(f"{b}/h_a/conv2", Nh, Nh, 3, _F(1, 32), stride=2),
        _conv(f"{b}/h_a/conv3", Nh, Nh, 3, _F(1, 32)),
        _conv(f"{b}/h_a/conv4", Nh, Nh, 3, _F(1, 64), stride=2),
        LayerDecl(f"{b}/prior/z", "prior", cin=Nh),
        _conv(f"{b}/h_s/subpel1", Nh, 4 * Nh, 3, _F(1, 64)),
        _conv(f"{b}/h_s/subpel2", Nh, 4 * Nh, 3, _F(1, 32)),
        _conv(f"{b}/h_s/conv3", Nh, 2 * M, 3, _F(1, 16)),
    ]
    if cfg.context_enabled:
        layers.append(LayerDecl(f"{b}/context/masked", "masked", M, 2 * M, CONTEXT_KERNEL, 1, _F(1, 16)))
    w = cfg.ep_widths
    for i in range(3):
        gain = _EP_OUT_GAIN if i == 2 else 1.0
        layers.append(_conv(f"{b}/entropy/conv{i + 1}", w[i], w[i + 1], 1, _F(1, 16), gain=gain))

    layers += _up_block(f"{b}/g_s/up1", M, N, _F(1, 16))
    layers.append(_sa(f"{b}/g_s/up1/sa", N, G))
    layers += _up_block(f"{b}/g_s/up2", N, N, _F(1, 8))
    layers += _up_block(f"{b}/g_s/up3", N, N, _F(1, 4))
    layers += _res_block(f"{b}/g_s/res", N, N, _F(1, 2))
    layers.append(_sa(f"{b}/g_s/res/sa", N, G))
    layers.append(_conv(f"{b}/g_s/out", N, 4 * cfg.input_channels, 3, _F(1, 2)))
    return layers


@dataclass(frozen=True)
class ModelGraph:
    luma: BranchConfig
    chroma: BranchConfig
    profile: Profile | None = None

    def __post_init__(self):
        if self.luma.input_channels != 1 or self.chroma.input_channels != 2:
            raise ConfigurationError("luma branch takes 1 channel and chroma branch takes 2")
        if self.luma.name == self.chroma.name:
            raise ConfigurationError("branch names must differ")

    @property
    def branches(self) -> tuple[BranchConfig, BranchConfig]:
        return self.luma, self.chroma

    def branch(self, name: str) -> BranchConfig:
        for b in self.branches:
            if b.name == name:
                return b
        raise UsageError(f"unknown branch {name!r}")

    def layers(self, branch: str | None = None) -> list[LayerDecl]:
        out = []
        for b in self.branches:
            if branch is None or b.name == branch:
                out += branch_layers(b)
        return out

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for layer in self.layers():
            shapes.update(layer.shapes())
        return shapes

    @property
    def context_mode(self) -> ContextMode:
        if self.luma.context_enabled and self.chroma.context_enabled:
            return ContextMode(ContextMode.BOTH)
        if self.luma.context_enabled:
            return ContextMode(ContextMode.LUMA)
        if self.chroma.context_enabled:
            raise ConfigurationError("chroma-only context is not a supported mode")
        return ContextMode(ContextMode.NONE)


def build_graph(luma: BranchConfig, chroma: BranchConfig, profile: Profile | None = None) -> ModelGraph:
    return ModelGraph(luma, chroma, profile)


def graph_for_profile(profile: str | int | Profile = "canonical", context: str | ContextMode = "both") -> ModelGraph:
    p = profile if isinstance(profile, Profile) else get_profile(profile)
    mode = context if isinstance(context, ContextMode) else ContextMode(context)
    return ModelGraph(*p.branches(mode), profile=p)


# -- weights -------------------------------------------------------------------

_LRELU_GAIN = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE**2))


def _layer_stream(seed: int, path: str) -> np.random.Generator:
    digest = hashlib.blake2b(path.encode(), digest_size=8).digest()
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, int.from_bytes(digest, "little")])))


@dataclass(frozen=True)
class ModelWeights:
    arrays: dict[str, np.ndarray]
    seed: int | None = None

    def __getitem__(self, key: str) -> np.ndarray:
        try:
            return self.arrays[key]
        except KeyError:
            raise ConfigurationError(f"missing weight {key!r}") from None

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for k in sorted(self.arrays):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.arrays[k], dtype="<f4").tobytes())
        return h.hexdigest()

    def validate(self, graph: ModelGraph, strict: bool = True) -> "ModelWeights":
        """Check every required layer is present with the right shape.

        Unknown extra entries are an error when ``strict`` and ignored
        otherwise.  Returns ``self`` for chaining.
        """
        shapes = graph.param_shapes()
        for key, shape in shapes.items():
            if key not in self.arrays:
                raise ConfigurationError(f"missing weight {key!r}")
            got = tuple(np.shape(self.arrays[key]))
            if got != shape:
                raise ConfigurationError(f"weight {key!r} has shape {got}, expected {shape}")
            if not np.all(np.isfinite(self.arrays[key])):
                raise ConfigurationError(f"weight {key!r} contains non-finite values")
        extra = sorted(set(self.arrays) - set(shapes))
        if extra and strict:
            raise ConfigurationError(f"unexpected weights: {', '.join(extra[:5])}")
        return self


def _init_conv(layer: LayerDecl, seed: int) -> dict[str, np.ndarray]:
    rng = _layer_stream(seed, layer.path)
    fan_in = layer.cin * layer.kernel**2
    w_std = layer.gain * _LRELU_GAIN / math.sqrt(fan_in)
    bound = math.sqrt(3.0) * w_std
    weight = rng.uniform(-bound, bound, (layer.cout, layer.cin, layer.kernel, layer.kernel))
    if layer.kind == "masked":
        weight = weight * causal_mask(layer.kernel, layer.kernel)
    b = 1.0 / math.sqrt(fan_in)
    bias = rng.uniform(-b, b, layer.cout) * 0.1
    return {f"{layer.path}.weight": weight.astype(np.float32), f"{layer.path}.bias": bias.astype(np.float32)}


def _init_sa(layer: LayerDecl, seed: int) -> dict[str, np.ndarray]:
    rng = _layer_stream(seed, layer.path)
    half = layer.cin // (2 * layer.sa_groups)
    defaults = {"cweight": 0.0, "cbias": 1.0, "sweight": 0.0, "sbias": 1.0, "gn_weight": 1.0, "gn_bias": 0.0}
    return {
        f"{layer.path}.{n}": (v + rng.uniform(-0.1, 0.1, half)).astype(np.float32)
        for n, v in defaults.items()
    }


def _init_prior(layer: LayerDecl, seed: int, init_scale: float = 10.0) -> dict[str, np.ndarray]:
    rng = _layer_stream(seed, layer.path)
    f = FACTORIZED_FILTERS
    stages = len(f) - 1
    scale = init_scale ** (1.0 / stages)
    out = {}
    for i in range(stages):
        m0 = math.log(math.expm1(1.0 / scale / f[i + 1]))
        shape = (layer.cin, f[i + 1], f[i])
        out[f"{layer.path}.matrix{i}"] = (m0 + rng.uniform(-0.1, 0.1, shape)).astype(np.float32)
        out[f"{layer.path}.bias{i}"] = rng.uniform(-0.5, 0.5, (layer.cin, f[i + 1])).astype(np.float32)
        if i < stages - 1:
            out[f"{layer.path}.factor{i}"] = rng.uniform(-0.1, 0.1, (layer.cin, f[i + 1])).astype(np.float32)
    return out


def init_weights(graph: ModelGraph, seed: int = 0) -> ModelWeights:
    """Deterministic stand-in for trained weights.

    Each layer draws from its own PCG64 stream keyed by ``(seed, layer path)``,
    so adding or removing a layer never perturbs the others.  Convolutions use
    fan-in scaled uniform weights (variance ``gain² / fan_in`` with the leaky
    ReLU gain); shortcut 1x1 projections of plain residual blocks start at zero.
    """
    arrays: dict[str, np.ndarray] = {}
    for layer in graph.layers():
        if layer.kind in ("conv", "masked"):
            arrays.update(_init_conv(layer, seed))
        elif layer.kind == "sa":
            arrays.update(_init_sa(layer, seed))
        else:
            arrays.update(_init_prior(layer, seed))
    return ModelWeights(arrays, seed)


# -- weight file -----------------------------------------------------------------

WEIGHT_MAGIC = b"SLICWGT1"


def save_weights(weights: ModelWeights, path: str | Path, profile: str | None = None) -> None:
    """Write the ``SLICWGT1`` container (manifest, float32 payload, checksum)."""
    keys = sorted(weights.arrays)
    manifest = {
        "seed": weights.seed,
        "profile": profile,
        "layers": [[k, "float32", list(np.shape(weights.arrays[k]))] for k in keys],
    }
    mbytes = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(weights.arrays[k], dtype="<f4").tobytes() for k in keys)
    checksum = hashlib.blake2b(payload, digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC + struct.pack("<I", len(mbytes)) + mbytes + payload + checksum)


def load_weights(path: str | Path) -> ModelWeights:
    data = Path(path).read_bytes()
    if data[:8] != WEIGHT_MAGIC:
        raise ConfigurationError(f"{path}: not a SLIC weight file")
    if len(data) < 12:
        raise ConfigurationError(f"{path}: truncated weight file")
    (mlen,) = struct.unpack_from("<I", data, 8)
    try:
        manifest = json.loads(data[12 : 12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"{path}: corrupt manifest") from exc
    payload, checksum = data[12 + mlen : -8], data[-8:]
    if hashlib.blake2b(payload, digest_size=8).digest() != checksum:
        raise ConfigurationError(f"{path}: payload checksum mismatch")
    arrays, pos = {}, 0
    for key, dtype, shape in manifest["layers"]:
        if dtype != "float32":
            raise ConfigurationError(f"{path}: unsupported dtype {dtype} for {key}")
        n = math.prod(shape) * 4
        if pos + n > len(payload):
            raise ConfigurationError(f"{path}: payload shorter than manifest")
        arrays[key] = np.frombuffer(payload, dtype="<f4", count=n // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += n
    if pos != len(payload):
        raise ConfigurationError(f"{path}: payload longer than manifest")
    return ModelWeights(arrays, manifest.get("seed"))


# -- complexity ----------------------------------------------------------------


@dataclass(frozen=True)
class ComplexityReport:
    total_params: int
    params_per_block: dict[str, int]
    kmac_per_pixel: float
    per_branch: dict[str, dict[str, float]] = field(default_factory=dict)


def count_parameters(graph: ModelGraph, weights: ModelWeights | None = None) -> ComplexityReport:
    """Parameter and MAC accounting from the layer declarations.

    MACs count every convolution once for a full encode plus decode pass
    (analysis, hyper analysis, hyper synthesis, context model, entropy
    parameters, synthesis); masked kernels are counted in full and
    element-wise operations are ignored.  When ``weights`` are given they are
    validated first; the counts only depend on shapes.
    """
    if weights is not None:
        weights.validate(graph)
    per_block: dict[str, int] = {}
    per_branch: dict[str, dict[str, float]] = {}
    total_macs = Fraction(0)
    for b in graph.branches:
        params, macs = 0, Fraction(0)
        for layer in branch_layers(b):
            per_block[layer.block] = per_block.get(layer.block, 0) + layer.num_params
            params += layer.num_params
            macs += layer.macs_per_pixel
        per_branch[b.name] = {"params": params, "kmac_per_pixel": float(macs) / 1000}
        total_macs += macs
    return ComplexityReport(sum(per_block.values()), per_block, float(total_macs) / 1000, per_branch)


def residual_attention_layers(N: int = 128) -> list[LayerDecl]:
    """Residual attention block of the Cheng2020 design, for comparison only.

    Two trunks of three residual units (1x1 N->N/2, 3x3 N/2->N/2, 1x1 N/2->N),
    the mask trunk closed by a 1x1 N->N convolution.
    """
    layers = []
    for trunk in ("a", "b"):
        for u in range(3):
            p = f"attention/{trunk}/unit{u + 1}"
            layers += [
                _conv(f"{p}/conv1", N, N // 2, 1, 1),
                _conv(f"{p}/conv2", N // 2, N // 2, 3, 1),
                _conv(f"{p}/conv3", N // 2, N, 1, 1),
            ]
    layers.append(_conv("attention/b/out", N, N, 1, 1))
    return layers


def residual_attention_param_count(N: int = 128) -> int:
    return sum(layer.num_params for layer in residual_attention_layers(N))


# -- forward passes --------------------------------------------------------------


def _spec(weights: ModelWeights, path: str, stride: int = 1) -> ConvSpec:
    return ConvSpec(weights[f"{path}.weight"], weights[f"{path}.bias"], stride)


def _sa_params(weights: ModelWeights, path: str) -> ShuffleAttentionParams:
    return ShuffleAttentionParams(*(weights[f"{path}.{n}"] for n in _SA_FIELDS))


def factorized_params(weights: ModelWeights, branch: BranchConfig) -> FactorizedPriorParams:
    p = f"{branch.name}/prior/z"
    stages = len(FACTORIZED_FILTERS) - 1
    return FactorizedPriorParams(
        tuple(weights[f"{p}.matrix{i}"] for i in range(stages)),
        tuple(weights[f"{p}.bias{i}"] for i in range(stages)),
        tuple(weights[f"{p}.factor{i}"] for i in range(stages - 1)),
    )


def sigma_from_raw(raw: np.ndarray) -> np.ndarray:
    """Positive scale: ``SIGMA_MIN * exp(clip(raw, 0, log(SIGMA_MAX / SIGMA_MIN)))``."""
    raw = np.asarray(raw, dtype=np.float32)
    return (SIGMA_MIN * np.exp(np.clip(raw.astype(np.float64), 0.0, _LOG_SIGMA_RANGE))).astype(np.float32)


class BranchModel:
    """Forward passes of one branch with bound weights."""

    def __init__(self, cfg: BranchConfig, weights: ModelWeights):
        self.cfg = cfg
        self.weights = weights
        self._prior: FactorizedPrior | None = None
        self._seq: _SequentialParams | None = None

    def _p(self, rel: str) -> str:
        return f"{self.cfg.name}/{rel}"

    def spec(self, rel: str, stride: int = 1) -> ConvSpec:
        return _spec(self.weights, self._p(rel), stride)

    @property
    def prior(self) -> FactorizedPrior:
        if self._prior is None:
            self._prior = FactorizedPrior(factorized_params(self.weights, self.cfg))
        return self._prior

    def analysis(self, x: np.ndarray) -> np.ndarray:
        x = as_tensor3(x)
        c, h, w = x.shape
        if c != self.cfg.input_channels:
            raise UsageError(f"{self.cfg.name} branch expects {self.cfg.input_channels} planes, got {c}")
        if h % HYPER_STRIDE or w % HYPER_STRIDE:
            raise UsageError(f"input {h}x{w} must be padded to a multiple of {HYPER_STRIDE} (see pad_reflect)")
        stages = []
        for s in range(4):
            p = f"g_a/stage{s + 1}"
            x = residual_block_down(
                x, self.spec(f"{p}/down/conv1", 2), self.spec(f"{p}/down/conv2"), self.spec(f"{p}/down/skip", 2)
            )
            for r in range(self.cfg.ga_res_blocks[s]):
                x = residual_block(x, self.spec(f"{p}/res{r + 1}/conv1"), self.spec(f"{p}/res{r + 1}/conv2"))
            if s in (1, 3):
                x = shuffle_attention(x, _sa_params(self.weights, self._p(f"{p}/sa")), self.cfg.sa_groups)
            stages.append(x)
        taps = [conv2d(avg_pool(stages[t], 2 ** (3 - t)), self.spec(f"g_a/taps/proj{t + 1}")) for t in range(3)]
        return conv2d(np.concatenate(taps + [stages[3]]), self.spec("g_a/taps/fuse"))

    def hyper_analysis(self, y: np.ndarray) -> np.ndarray:
        h = leaky_relu(conv2d(y, self.spec("h_a/conv1")))
        h = leaky_relu(conv2d(h, self.spec("h_a/conv2", 2)))
        h = leaky_relu(conv2d(h, self.spec("h_a/conv3")))
        return conv2d(h, self.spec("h_a/conv4", 2))

    def hyper_synthesis(self, z_hat: np.ndarray) -> np.ndarray:
        h = leaky_relu(subpixel_conv(z_hat, self.spec("h_s/subpel1"), 2))
        h = leaky_relu(subpixel_conv(h, self.spec("h_s/subpel2"), 2))
        return conv2d(h, self.spec("h_s/conv3"))

    def context(self, y_hat: np.ndarray) -> np.ndarray:
        """Vectorised masked convolution over a fully known latent."""
        if not self.cfg.context_enabled:
            raise ConfigurationError(f"context model disabled in {self.cfg.name} branch")
        return masked_conv2d(y_hat, self.spec("context/masked"))

    def entropy_params(self, gamma: np.ndarray, tau: np.ndarray | None = None) -> EntropyParams:
        gamma = as_tensor3(gamma)
        M = self.cfg.M
        if gamma.shape[0] != 2 * M:
            raise UsageError(f"gamma must have {2 * M} channels, got {gamma.shape[0]}")
        if self.cfg.context_enabled:
            if tau is None:
                raise UsageError("context-enabled branch needs tau")
            tau = as_tensor3(tau)
            if tau.shape != gamma.shape:
                raise UsageError(f"tau {tau.shape} is not aligned with gamma {gamma.shape}")
            h = np.concatenate([gamma, tau])
        else:
            if tau is not None:
                raise UsageError("branch without context model takes gamma only")
            h = gamma
        h = leaky_relu(conv2d(h, self.spec("entropy/conv1")))
        h = leaky_relu(conv2d(h, self.spec("entropy/conv2")))
        out = conv2d(h, self.spec("entropy/conv3"))
        return EntropyParams(out[:M], sigma_from_raw(out[M:]))

    def synthesis(self, y_hat: np.ndarray) -> np.ndarray:
        y_hat = as_tensor3(y_hat)
        if y_hat.shape[0] != self.cfg.M:
            raise UsageError(f"latent must have {self.cfg.M} channels, got {y_hat.shape[0]}")
        ws = self.weights
        x = residual_block_up(y_hat, self.spec("g_s/up1/subpel"), self.spec("g_s/up1/conv"), self.spec("g_s/up1/skip"))
        x = shuffle_attention(x, _sa_params(ws, self._p("g_s/up1/sa")), self.cfg.sa_groups)
        for u in (2, 3):
            p = f"g_s/up{u}"
            x = residual_block_up(x, self.spec(f"{p}/subpel"), self.spec(f"{p}/conv"), self.spec(f"{p}/skip"))
        x = residual_block(x, self.spec("g_s/res/conv1"), self.spec("g_s/res/conv2"))
        x = shuffle_attention(x, _sa_params(ws, self._p("g_s/res/sa")), self.cfg.sa_groups)
        x = subpixel_conv(x, self.spec("g_s/out"), 2)
        return np.clip(x, 0.0, 1.0)

    # Sequential (per-position) entropy parameters, shared by encoder and decoder.

    @property
    def sequential(self) -> "_SequentialParams":
        if self._seq is None:
            self._seq = _SequentialParams(self)
        return self._seq


class _SequentialParams:
    """Per-position context + entropy parameter evaluation.

    Encoder and decoder both call :meth:`at` in raster order, so the float
    arithmetic that selects coding tables is literally the same sequence of
    operations on both sides.
    """

    def __init__(self, model: BranchModel):
        cfg = model.cfg
        self.M = cfg.M
        self.context = cfg.context_enabled
        k = CONTEXT_KERNEL
        self.half = k // 2
        self.mask = causal_mask(k, k).astype(bool)
        if self.context:
            s = model.spec("context/masked")
            w = s.weight.astype(np.float64)[:, :, self.mask]  # (2M, M, taps)
            self.ctx_w = np.ascontiguousarray(w.transpose(0, 2, 1).reshape(2 * cfg.M, -1))
            self.ctx_b = s.bias.astype(np.float64)
        self.ep = []
        for i in range(3):
            s = model.spec(f"entropy/conv{i + 1}")
            self.ep.append((np.ascontiguousarray(s.weight[:, :, 0, 0], dtype=np.float64), s.bias.astype(np.float64)))

    def padded(self, y_hat: np.ndarray) -> np.ndarray:
        """Zero border of ``half`` rows/columns around the latent (float64)."""
        m, h, w = y_hat.shape
        p = self.half
        out = np.zeros((m, h + 2 * p, w + 2 * p))
        out[:, p : p + h, p : p + w] = y_hat
        return out

    def neighbourhood(self, padded: np.ndarray, i: int, j: int) -> np.ndarray:
        """Causal 5x5 neighbourhood of (i, j), tap-major, length ``12 * M``."""
        k = 2 * self.half + 1
        window = padded[:, i : i + k, j : j + k]
        return window[:, self.mask].T.ravel()

    def at(self, gamma: np.ndarray, padded: np.ndarray | None, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        g = gamma[:, i, j].astype(np.float64)
        if self.context:
            tau = (self.ctx_w @ self.neighbourhood(padded, i, j) + self.ctx_b).astype(np.float32)
            h = np.concatenate([g, tau.astype(np.float64)])
        else:
            h = g
        for n, (w, b) in enumerate(self.ep):
            h = (w @ h + b).astype(np.float32)
            if n < 2:
                h = np.maximum(h, np.float32(LEAKY_SLOPE) * h)
            h = h.astype(np.float64)
        return h[: self.M].astype(np.float32), sigma_from_raw(h[self.M :])


class SlicModel:
    """Both branches bound to one validated weight set."""

    def __init__(self, graph: ModelGraph, weights: ModelWeights, strict: bool = True):
        weights.validate(graph, strict=strict)
        self.graph = graph
        self.weights = weights
        self.luma = BranchModel(graph.luma, weights)
        self.chroma = BranchModel(graph.chroma, weights)
        self.seeded = False

    @classmethod
    def from_seed(cls, profile: str | int = "canonical", seed: int = 0, context: str = "both") -> "SlicModel":
        graph = graph_for_profile(profile, context)
        model = cls(graph, init_weights(graph, seed))
        model.seeded = True
        return model

    def branch(self, name: str) -> BranchModel:
        if name == self.graph.luma.name:
            return self.luma
        if name == self.graph.chroma.name:
            return self.chroma
        raise UsageError(f"unknown branch {name!r}")

    def with_context(self, context: str | ContextMode) -> "SlicModel":
        """The model under another context mode.

        The entropy parameter input width depends on the mode, so seeded
        stand-in weights are regenerated for the new graph (every other layer
        comes out identical because streams are keyed by layer path).  Loaded
        weights must already fit the requested graph.

        Raises:
            ConfigurationError: if loaded weights do not fit the requested mode.
        """
        mode = context if isinstance(context, ContextMode) else ContextMode(context)
        if mode == self.graph.context_mode:
            return self
        luma = replace(self.graph.luma, context_enabled=mode.luma)
        chroma = replace(self.graph.chroma, context_enabled=mode.chroma)
        graph = ModelGraph(luma, chroma, self.graph.profile)
        if self.seeded and self.weights.seed is not None:
            model = SlicModel(graph, init_weights(graph, self.weights.seed))
            model.seeded = True
            return model
        return SlicModel(graph, self.weights, strict=False)


def forward_encode_branch(x: np.ndarray, weights: ModelWeights, branch: BranchConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(y, z)`` for one branch input of shape (C, H, W)."""
    m = BranchModel(branch, weights)
    y = m.analysis(x)
    return y, m.hyper_analysis(y)


def forward_decode_branch(y_hat: np.ndarray, weights: ModelWeights, branch: BranchConfig) -> np.ndarray:
    y_hat = np.asarray(y_hat)
    if y_hat.ndim != 3 or y_hat.shape[0] != branch.M:
        raise UsageError(f"latent must be ({branch.M}, h, w), got {y_hat.shape}")
    if np.any(y_hat != np.rint(y_hat)):
        raise UsageError("latent must be integer valued")
    return BranchModel(branch, weights).synthesis(y_hat)


def entropy_params(gamma, tau, weights: ModelWeights, branch: BranchConfig) -> EntropyParams:
    return BranchModel(branch, weights).entropy_params(gamma, tau)


RATE_COMPONENTS = ("z_luma", "z_chroma", "y_luma", "y_chroma")


def rd_loss_eval(x, x_hat, rates: dict[str, float], lambdas: Iterable[float]) -> float:
    """Combined loss with R the sum of the four rate components in bpp."""
    from .metrics import rd_loss

    missing = [k for k in RATE_COMPONENTS if k not in rates]
    if missing:
        raise UsageError(f"missing rate components: {', '.join(missing)}")
    lam1, lam2, lam3 = lambdas
    return rd_loss(x, x_hat, float(sum(rates[k] for k in RATE_COMPONENTS)), lam1, lam2, lam3)
