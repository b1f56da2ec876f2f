"""Range coder and the probability models used to code latents and hyperlatents."""

from .coder import (
    PRECISION,
    TOTAL,
    CdfTable,
    RangeDecoder,
    RangeEncoder,
    decode_symbol,
    encode_symbol,
    exp_golomb_bits,
    quantize_pmf,
    range_decode,
    range_encode,
)
from .models import (
    SIGMA_MIN,
    EntropyParams,
    channel_totals,
    FactorizedPrior,
    FactorizedPriorParams,
    GaussianConditional,
    default_scale_table,
    estimate_bits,
    factorized_prior_cdf,
    gaussian_cdf_bins,
    shared_gaussian_conditional,
)
