import math

import numpy as np
import pytest
from scipy.stats import norm

from slic.entropy import (
    TOTAL,
    CdfTable,
    EntropyParams,
    FactorizedPrior,
    FactorizedPriorParams,
    GaussianConditional,
    RangeDecoder,
    RangeEncoder,
    channel_totals,
    decode_symbol,
    encode_symbol,
    estimate_bits,
    exp_golomb_bits,
    gaussian_cdf_bins,
    quantize_pmf,
    range_decode,
    range_encode,
)
from slic.entropy.models import FACTORIZED_FILTERS, SIGMA_MIN
from slic.errors import ConfigurationError, DecodeError, UsageError


def random_table(rng, rows=3, escape=True):
    pmfs = [rng.dirichlet(np.full(int(rng.integers(2, 20)), 0.5)) for _ in range(rows)]
    offsets = rng.integers(-10, 10, size=rows).tolist()
    return CdfTable.from_pmfs(pmfs, offsets, escape)


def symbols_for(rng, table: CdfTable, n: int, escape: bool):
    idx = rng.integers(0, len(table), size=n).tolist()
    syms = []
    for i in idx:
        nsym = len(table.cdfs[i]) - 1 - (1 if escape else 0)
        lo = table.offsets[i] - (40 if escape else 0)
        hi = table.offsets[i] + nsym + (40 if escape else 0)
        syms.append(int(rng.integers(lo, hi)))
    return syms, idx


def symmetric_prior(channels=2, seed=0):
    rng = np.random.default_rng(seed)
    f = FACTORIZED_FILTERS
    mats = tuple(rng.normal(0, 0.5, (channels, f[k + 1], f[k])) for k in range(len(f) - 1))
    biases = tuple(np.zeros((channels, f[k + 1])) for k in range(len(f) - 1))
    factors = tuple(rng.normal(0, 0.5, (channels, f[k + 1])) for k in range(len(f) - 2))
    return FactorizedPriorParams(mats, biases, factors)


def test_quantize_pmf_properties(rng):
    for _ in range(200):
        pmf = rng.dirichlet(np.full(int(rng.integers(1, 300)), 0.1))
        cdf = quantize_pmf(pmf)
        freq = np.diff(cdf)
        assert cdf[0] == 0 and cdf[-1] == TOTAL
        assert freq.min() >= 1
    with pytest.raises(ConfigurationError):
        quantize_pmf(np.array([0.5, -0.1]))
    with pytest.raises(ConfigurationError):
        quantize_pmf(np.zeros(3))


def test_randomized_round_trips():
    rng = np.random.default_rng(7)
    for trial in range(10_000):
        escape = trial % 2 == 0
        table = random_table(rng, rows=int(rng.integers(1, 4)), escape=escape)
        syms, idx = symbols_for(rng, table, int(rng.integers(0, 12)), escape)
        data = range_encode(syms, table, idx)
        assert range_decode(data, table, idx) == syms


def test_empty_and_single_symbol_streams():
    table = CdfTable.from_pmfs([np.array([0.7, 0.3])], [0], escape=False)
    empty = range_encode([], table)
    assert empty == bytes(4)
    assert range_decode(empty, table, 0) == []
    one = range_encode([1], table)
    assert range_decode(one, table, 1) == [1]


def test_decoder_errors():
    table = CdfTable.from_pmfs([np.full(8, 1 / 8)], [0], escape=False)
    data = range_encode(list(range(8)) * 50, table)
    for cut in (1, 2, len(data) // 2):
        with pytest.raises(DecodeError):
            range_decode(data[:-cut], table, 400)
    with pytest.raises(DecodeError):
        range_decode(data + b"\x00", table, 400)
    with pytest.raises(DecodeError):
        range_decode(b"\x00\x00", table, 1)


def test_uniform_symbols_cost_their_entropy():
    rng = np.random.default_rng(3)
    table = CdfTable.from_pmfs([np.full(256, 1 / 256)], [0], escape=False)
    syms = rng.integers(0, 256, size=100_000).tolist()
    data = range_encode(syms, table)
    assert len(data) * 8 <= 8 * len(syms) * 1.001 + 32
    assert range_decode(data, table, len(syms)) == syms


def test_minimum_mass_symbols_round_trip():
    rng = np.random.default_rng(4)
    # Three symbols at the 16-bit floor of 2**-16, the rest of the mass on one.
    cdf = [0, 1, 2, 3, TOTAL]
    table = CdfTable([cdf], [0], escape=False)
    syms = rng.choice(4, size=5000, p=[0.1, 0.1, 0.1, 0.7]).tolist()
    assert range_decode(range_encode(syms, table), table, len(syms)) == syms


def test_escape_coding_of_large_values():
    table = CdfTable.from_pmfs([np.array([0.5, 0.4, 0.1])], [0], escape=True)
    values = [0, 1, -1, 2, 1000, -(10**9), 2**40]
    assert range_decode(range_encode(values, table), table, len(values)) == values
    assert [exp_golomb_bits(v) for v in (0, 1, 2, 3, 6, 7)] == [2, 4, 4, 6, 6, 8]
    with pytest.raises(ConfigurationError):
        range_encode([5], CdfTable.from_pmfs([np.array([0.5, 0.5])], [0], escape=False))


def test_raw_bits_round_trip(rng):
    values = [(int(v), int(n)) for v, n in zip(rng.integers(0, 2**40, 200), rng.integers(1, 41, 200))]
    values = [(v & ((1 << n) - 1), n) for v, n in values]
    enc = RangeEncoder()
    for v, n in values:
        enc.encode_bits(v, n)
    dec = RangeDecoder(enc.finish())
    assert [dec.decode_bits(n) for _, n in values] == [v for v, _ in values]
    dec.finish()


def test_gaussian_bins_match_scipy():
    s = np.arange(-6, 7)
    for mu, sigma in [(0.0, 1.0), (0.3, 0.5), (-1.25, 3.0)]:
        want = norm.cdf(s + 0.5, mu, sigma) - norm.cdf(s - 0.5, mu, sigma)
        np.testing.assert_allclose(gaussian_cdf_bins(mu, sigma, s), want, rtol=1e-9, atol=1e-15)
    with pytest.raises(UsageError):
        gaussian_cdf_bins(0.0, 0.0, s)


def test_gaussian_bins_are_symmetric_and_keep_tail_precision():
    s = np.arange(1, 40)
    np.testing.assert_allclose(gaussian_cdf_bins(0.0, 1.0, s), gaussian_cdf_bins(0.0, 1.0, -s), rtol=1e-12)
    assert gaussian_cdf_bins(0.0, 1.0, 30) > 0


def test_gaussian_conditional_round_trip_and_estimate(rng):
    gc = GaussianConditional()
    shape = (8, 12, 12)
    mu = rng.normal(0, 3, shape)
    sigma = np.exp(rng.uniform(np.log(SIGMA_MIN), np.log(40), shape))
    values = np.rint(rng.normal(mu, sigma)).astype(np.int64)
    values.flat[::97] += 500  # force a few escapes
    centres, keys = gc.quantize_params(mu, sigma)
    enc = RangeEncoder()
    gc.encode(enc, values.ravel(), centres.ravel(), keys.ravel())
    data = enc.finish()
    dec = RangeDecoder(data)
    assert gc.decode(dec, centres.ravel(), keys.ravel()) == values.ravel().tolist()
    dec.finish()
    est = estimate_bits(values, EntropyParams(mu, sigma), gc)
    coded = 8 * len(data)
    assert abs(coded - est) <= 0.005 * est + 128


def test_gaussian_bits_input_checks():
    gc = GaussianConditional()
    with pytest.raises(UsageError):
        gc.bits(np.zeros((2, 2)), np.zeros((2, 3)), np.ones((2, 3)))
    with pytest.raises(UsageError):
        gc.bits(np.full((2, 2), 0.5), np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(UsageError):
        gc.quantize_params(np.array([np.nan]), np.array([1.0]))
    with pytest.raises(UsageError):
        EntropyParams(np.zeros(3), np.zeros(4))


def test_channel_totals_sum_to_total(rng):
    bits = rng.random((5, 3, 4))
    totals = channel_totals(bits)
    assert totals.shape == (5,)
    assert totals.sum() == pytest.approx(bits.sum())


def test_factorized_prior_parameter_count():
    assert symmetric_prior(channels=1).num_params == 43


def test_factorized_prior_is_symmetric_for_zero_biases():
    prior = FactorizedPrior(symmetric_prior())
    for row in prior.rows:
        core = row.pmf[:-1]
        np.testing.assert_allclose(core, core[::-1], rtol=1e-9)
        assert row.offset + (len(core) - 1) / 2 == 0
        assert row.cdf[-1] == TOTAL


def test_factorized_prior_monte_carlo_coding():
    rng = np.random.default_rng(11)
    prior = FactorizedPrior(symmetric_prior(channels=3, seed=5))
    z = np.empty((3, 40, 40), np.int64)
    entropy = 0.0
    for c, row in enumerate(prior.rows):
        core = row.pmf[:-1] / row.pmf[:-1].sum()
        z[c] = rng.choice(len(core), size=(40, 40), p=core) + row.offset
        entropy += -np.sum(core * np.log2(core)) * 1600
    data = prior.encode(z)
    np.testing.assert_array_equal(prior.decode(data, (40, 40)), z)
    coded = 8 * len(data)
    assert abs(coded - entropy) <= 0.02 * entropy + 64
    est = prior.bits(z).sum()
    assert abs(coded - est) <= 0.005 * est + 128


def test_factorized_prior_rejects_bad_shapes():
    p = symmetric_prior()
    with pytest.raises(ConfigurationError):
        FactorizedPriorParams(p.matrices, p.biases, p.factors[:-1])
    with pytest.raises(UsageError):
        FactorizedPrior(p).encode(np.zeros((3, 2, 2)))


def test_single_symbol_helpers_agree_with_table_api():
    table = CdfTable.from_pmfs([np.array([0.2, 0.5, 0.3])], [-1], escape=True)
    enc = RangeEncoder()
    for v in (-1, 0, 7, -9):
        encode_symbol(enc, v, table.cdfs[0], -1)
    data = enc.finish()
    assert data == range_encode([-1, 0, 7, -9], table)
    dec = RangeDecoder(data)
    assert [decode_symbol(dec, table.cdfs[0], -1) for _ in range(4)] == [-1, 0, 7, -9]
    assert math.isclose(sum(np.diff(table.cdfs[0])), TOTAL)
