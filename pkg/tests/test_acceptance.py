"""Acceptance suite: one PASS/FAIL line per headline criterion.

Run with ``pytest tests/test_acceptance.py -s`` (lines are printed even
without ``-s``).  Each test asserts after printing, so a FAIL line is always
accompanied by a failing test.
"""

import math
import time

import numpy as np
import pytest
from skimage import data as skdata

from oracles import CIEDE2000_PAIRS, ciede2000_scalar, ms_ssim_fft
from slic.bd import bd_quality, bd_rate, load_fixture
from slic.codec import HEADER_SIZE, SUBSTREAMS, SlicBitstream, decode, decode_full, encode
from slic.color import ColorSpace, PlanarImage, ciede2000
from slic.entropy import CdfTable, range_decode, range_encode
from slic.errors import DecodeError
from slic.metrics import ms_ssim, psnr
from slic.model import SlicModel, count_parameters, graph_for_profile, residual_attention_param_count
from slic.tensor_nn import shuffle_attention_param_count


def report(capsys, name: str, ok: bool, detail: str):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


def series(name, metric):
    (curve,) = [c for (_, m), c in load_fixture(f"{name}.csv").items() if m.value == metric]
    return curve


# -- BD reproduction -------------------------------------------------------------


def test_bd_table1(capsys):
    t0 = time.perf_counter()
    vtm = {m: series("fig2_vtm", m) for m in ("psnr", "msssim_db", "ciede2000")}
    # The MS-SSIM series of the main comparison figure does not reproduce the
    # table; the ablation figure's full model series does (see decisions ledger).
    rows = [
        ("PSNR", bd_rate(vtm["psnr"], series("fig2_slic", "psnr")), 21.74, 1.0),
        ("BD-PSNR", bd_quality(vtm["psnr"], series("fig2_slic", "psnr")), -0.83, 0.05),
        ("MS-SSIM", bd_rate(vtm["msssim_db"], series("fig5_luma_chroma_context", "msssim_db")), -7.50, 1.0),
        ("BD-MS-SSIM", bd_quality(vtm["msssim_db"], series("fig5_luma_chroma_context", "msssim_db")), 0.21, 0.03),
        ("1/CIEDE2000", bd_rate(vtm["ciede2000"], series("fig2_slic", "ciede2000")), -4.66, 1.0),
    ]
    elapsed = time.perf_counter() - t0
    ok = all(abs(v - want) <= tol for _, v, want, tol in rows) and elapsed < 1.0
    detail = ", ".join(f"{n} {v:+.3f} (target {want:+.2f}±{tol})" for n, v, want, tol in rows)
    report(capsys, "BD Table 1 (SLIC vs VTM)", ok, f"{detail}; {elapsed * 1000:.0f} ms")


def test_bd_table2(capsys):
    t0 = time.perf_counter()
    vtm = series("fig2_vtm", "psnr")
    targets = [("fig5_wo_context", 39.89), ("fig5_luma_context", 27.90), ("fig5_luma_chroma_context", 21.74)]
    got = [(n, bd_rate(vtm, series(n, "psnr")), want) for n, want in targets]
    elapsed = time.perf_counter() - t0
    within = all(abs(v - want) <= 1.5 for _, v, want in got)
    ordered = got[0][1] > got[1][1] > got[2][1]
    detail = ", ".join(f"{n} {v:+.2f} (target {want:+.2f}±1.5)" for n, v, want in got)
    report(capsys, "BD Table 2 (context ablation)", within and ordered and elapsed < 1.0,
           f"{detail}; ordering {'holds' if ordered else 'broken'}; {elapsed * 1000:.0f} ms")


# -- complexity ------------------------------------------------------------------


def test_complexity_anchors(capsys):
    t0 = time.perf_counter()
    report_ = count_parameters(graph_for_profile("canonical", "both"))
    sa = shuffle_attention_param_count(128, 8)
    ra = residual_attention_param_count(128)
    elapsed = time.perf_counter() - t0
    ok = (
        sa == 48
        and ra == 337_536
        and abs(report_.total_params / 15e6 - 1) <= 0.10
        and abs(report_.kmac_per_pixel / 829.72 - 1) <= 0.05
        and elapsed < 5.0
    )
    report(capsys, "Complexity anchors", ok,
           f"SA={sa}, residual attention={ra}, params={report_.total_params:,} (15M±10%), "
           f"{report_.kmac_per_pixel:.2f} kMAC/px (829.72±5%); {elapsed:.2f} s")


# -- codec round trip and rate consistency ------------------------------------------


def _crop(img, top, left, h, w):
    return img[top : top + h, left : left + w]


def round_trip_corpus():
    rng = np.random.default_rng(2024)
    sizes = [(64, 64), (64, 100), (96, 130), (128, 128), (70, 190), (150, 90), (64, 200), (100, 77), (128, 64)]
    images = []
    for k in range(12):
        h, w = sizes[k % len(sizes)]
        if k % 3 == 0:
            arr = rng.random((h, w, 3))
        elif k % 3 == 1:
            arr = np.clip(rng.normal(0.5, 0.15, (h, w, 3)), 0, 1)
        else:
            arr = (rng.random((h, w, 3)) > 0.5).astype(np.float64)
        images.append((f"noise{k}", arr))
    for k in range(12):
        h, w = sizes[(k + 4) % len(sizes)]
        yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
        a, b = rng.uniform(-1, 1, 2)
        base = [a * yy + b * xx, np.hypot(yy - 0.5, xx - 0.5), 0.5 + 0.5 * np.sin(6 * xx + 3 * yy)][k % 3]
        arr = np.stack([base, base[::-1], base[:, ::-1]], axis=-1)
        arr = (arr - arr.min()) / (np.ptp(arr) or 1)
        images.append((f"gradient{k}", arr))
    photos = [skdata.astronaut(), skdata.chelsea(), skdata.coffee(), skdata.rocket(),
              skdata.immunohistochemistry(), skdata.colorwheel()]
    for k in range(26):
        src = photos[k % len(photos)]
        h, w = sizes[(k + 2) % len(sizes)]
        top = int(rng.integers(0, src.shape[0] - h))
        left = int(rng.integers(0, src.shape[1] - w))
        images.append((f"photo{k}", _crop(src, top, left, h, w).astype(np.float64) / 255))
    return [(name, PlanarImage.from_hwc(arr)) for name, arr in images]


@pytest.fixture(scope="module")
def corpus_results():
    model = SlicModel.from_seed("canonical", seed=0, context="both")
    t0 = time.perf_counter()
    results = []
    for name, img in round_trip_corpus():
        enc = encode(img, model)
        first, second = decode_full(enc.data, model), decode_full(enc.data, model)
        results.append((name, img, enc, first, second))
    return model, results, time.perf_counter() - t0


def _rewrite(data, streams):
    bs = SlicBitstream.from_bytes(data)
    return SlicBitstream(bs.width, bs.height, bs.profile, bs.context, tuple(streams)).to_bytes()


def test_codec_round_trip_suite(capsys, corpus_results):
    model, results, elapsed = corpus_results
    exact = deterministic = sized = 0
    for _, img, enc, first, second in results:
        exact += all(
            np.array_equal(first.y_hat[b], enc.branches[b].y_hat) and np.array_equal(first.z_hat[b], enc.branches[b].z_hat)
            for b in ("luma", "chroma")
        )
        deterministic += np.array_equal(first.image.data, second.image.data)
        sized += first.image.data.shape == img.data.shape
    n = len(results)
    non_multiple = sum(1 for _, img, *_ in results if img.height % 64 or img.width % 64)

    faults = detected = 0
    for _, _, enc, _, _ in results[:6]:
        streams = enc.bitstream.substreams
        for i, name in enumerate(SUBSTREAMS):
            truncated = list(streams)
            truncated[i] = truncated[i][:-1]
            corrupted = bytearray(enc.data)
            corrupted[HEADER_SIZE + sum(len(s) for s in streams[:i]) + len(streams[i]) // 2] ^= 0x10
            for bad in (_rewrite(enc.data, truncated), bytes(corrupted), enc.data[:-1]):
                faults += 1
                try:
                    decode(bad, model)
                except DecodeError as exc:
                    detected += exc.substream in (name, "header")
    ok = n >= 50 and exact == n and deterministic == n and sized == n and detected == faults and elapsed < 600
    report(capsys, "Codec round trip", ok,
           f"{exact}/{n} bit-exact latents ({non_multiple} non-multiple-of-64 sizes), {deterministic}/{n} "
           f"deterministic decodes, {detected}/{faults} injected faults raised DecodeError; {elapsed:.0f} s")


def test_rate_consistency(capsys, corpus_results):
    _, results, _ = corpus_results
    worst = 0.0
    checked = failed = 0
    for _, img, enc, _, _ in results:
        for b in enc.branches.values():
            for est, coded in ((b.z_bits_estimate, 8 * len(b.z_bytes)), (b.y_bits_estimate, 8 * len(b.y_bytes))):
                checked += 1
                slack = abs(coded - est) - 0.005 * est
                worst = max(worst, abs(coded - est))
                failed += slack > 128
        est_bpp = (enc.estimated_bits + 8 * HEADER_SIZE) / (img.width * img.height)
        allowance = (0.005 * enc.estimated_bits + 4 * 128) / (img.width * img.height)
        failed += abs(enc.bpp - est_bpp) > allowance
    report(capsys, "Rate consistency", failed == 0,
           f"{checked} substreams, coded vs estimated bits worst |diff| {worst:.0f} bits "
           f"(allowance 0.5% + 128 per substream), {failed} violations")


# -- entropy coder -------------------------------------------------------------------


def test_entropy_coder_suite(capsys):
    rng = np.random.default_rng(99)
    t0 = time.perf_counter()
    trips = 0
    for _ in range(10_000):
        pmfs = [rng.dirichlet(np.full(int(rng.integers(2, 30)), 0.3)) for _ in range(int(rng.integers(1, 4)))]
        table = CdfTable.from_pmfs(pmfs, rng.integers(-5, 5, len(pmfs)).tolist(), escape=True)
        idx = rng.integers(0, len(pmfs), int(rng.integers(0, 16))).tolist()
        syms = [int(rng.integers(-60, 60)) for _ in idx]
        trips += range_decode(range_encode(syms, table, idx), table, idx) == syms

    uniform = CdfTable.from_pmfs([np.full(256, 1 / 256)], [0], escape=False)
    syms = rng.integers(0, 256, 1_000_000).tolist()
    data = range_encode(syms, uniform)
    uniform_ok = range_decode(data, uniform, len(syms)) == syms
    overhead = len(data) / len(syms) - 1

    skewed_ok = True
    for _ in range(20):
        n = int(rng.integers(3, 64))
        freq = np.ones(n, np.int64)
        freq[int(rng.integers(n))] += (1 << 16) - n
        cdf = np.concatenate([[0], np.cumsum(freq)]).tolist()
        table = CdfTable([cdf], [0], escape=False)
        s = rng.integers(0, n, 2000).tolist()
        skewed_ok &= range_decode(range_encode(s, table), table, len(s)) == s
    elapsed = time.perf_counter() - t0
    ok = trips == 10_000 and uniform_ok and abs(overhead) <= 0.001 and skewed_ok
    report(capsys, "Entropy coder", ok,
           f"{trips}/10000 random round trips, 1e6 uniform symbols -> {len(data)} bytes "
           f"({overhead * 100:+.4f}% vs entropy), 2^-16-mass tables {'ok' if skewed_ok else 'failed'}; {elapsed:.1f} s")


# -- metric oracles --------------------------------------------------------------------


def test_metric_oracles(capsys):
    rng = np.random.default_rng(5)
    ciede_err = max(
        max(abs(ciede2000(a, b) - want), abs(ciede2000_scalar(a, b) - want)) for a, b, want in CIEDE2000_PAIRS
    )
    ms_err = 0.0
    for _ in range(20):
        x = rng.random((3, 256, 256))
        y = np.clip(x + rng.normal(0, rng.uniform(0.02, 0.3), x.shape), 0, 1)
        ms_err = max(ms_err, abs(ms_ssim(PlanarImage(ColorSpace.RGB, x), PlanarImage(ColorSpace.RGB, y)) - ms_ssim_fft(x, y)))
    psnr_err = 0.0
    for _ in range(20):
        x, y = rng.random((3, 32, 48)), rng.random((3, 32, 48))
        direct = 10 * math.log10(1 / float(np.mean((x - y) ** 2)))
        psnr_err = max(psnr_err, abs(psnr(PlanarImage(ColorSpace.RGB, x), PlanarImage(ColorSpace.RGB, y)) - direct))
    ok = len(CIEDE2000_PAIRS) >= 10 and ciede_err <= 1e-4 and ms_err <= 1e-4 and psnr_err <= 1e-9
    report(capsys, "Metric oracles", ok,
           f"CIEDE2000 {len(CIEDE2000_PAIRS)} pairs max err {ciede_err:.1e}, MS-SSIM 20 pairs max err {ms_err:.1e}, "
           f"PSNR max err {psnr_err:.1e} dB")


def test_out_of_scope_rd_curves(capsys):
    with capsys.disabled():
        print("\nSKIP  Absolute RD curves and trained-latent imagery: need trained weights; "
              "replaced by the suites above (see decisions ledger)")
