"""Command line interface: ``slic <subcommand> ...``.

Exit codes: 0 success, 2 usage or input error, 3 bitstream error,
4 computation error, 5 I/O error.  Machine-readable output is one line of
space-separated ``key=value`` pairs (or CSV files for exports).
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import analysis, bd, metrics
from .codec import encode, decode_full
from .errors import ComputationError, ConfigurationError, DecodeError, UsageError
from .imageio import ImageIOError, read_image, write_image
from .model import (
    PROFILES,
    SlicModel,
    count_parameters,
    get_profile,
    graph_for_profile,
    load_weights,
    residual_attention_param_count,
)

log = logging.getLogger("slic")

EXIT_OK, EXIT_USAGE, EXIT_BITSTREAM, EXIT_COMPUTATION, EXIT_IO = 0, 2, 3, 4, 5


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    inputs: tuple[str, ...]
    output: str | None
    seed: int
    profile: str
    context: str
    lambda_index: int
    weights: str | None
    verbosity: int


def fmt(v) -> str:
    if isinstance(v, float):
        if v != v or v in (float("inf"), float("-inf")):
            return str(v)
        return format(v, ".10g")
    return str(v)


def kv_line(pairs: dict) -> str:
    return " ".join(f"{k}={fmt(v)}" for k, v in pairs.items())


def parse_kv_line(line: str) -> dict[str, str]:
    """Inverse of :func:`kv_line` (values stay strings)."""
    return dict(tok.split("=", 1) for tok in line.split())


def _load_model(cfg: CliConfig, context: str = "both") -> SlicModel:
    graph = graph_for_profile(cfg.profile, context)
    if cfg.weights:
        path = Path(cfg.weights)
        if not path.is_file():
            raise UsageError(f"weights file not found: {path}")
        return SlicModel(graph, load_weights(path))
    return SlicModel.from_seed(cfg.profile, cfg.seed, context)


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {p}")
    return p


def cmd_encode(cfg: CliConfig) -> int:
    img = read_image(cfg.inputs[0])
    result = encode(img, _load_model(cfg, cfg.context), cfg.lambda_index)
    try:
        Path(cfg.output).write_bytes(result.data)
    except OSError as exc:
        raise ImageIOError(f"cannot write {cfg.output}: {exc}") from exc
    print(kv_line(result.stats()))
    return EXIT_OK


def cmd_decode(cfg: CliConfig) -> int:
    data = _require_file(cfg.inputs[0]).read_bytes()
    out = decode_full(data, _load_model(cfg))
    write_image(cfg.output, out.image)
    print(kv_line({"width": out.image.width, "height": out.image.height}))
    return EXIT_OK


def cmd_metrics(cfg: CliConfig) -> int:
    ref, test = (read_image(p) for p in cfg.inputs)
    r = metrics.quality_report(ref, test)
    print(kv_line({"psnr": r.psnr_db, "msssim": r.msssim, "msssim_db": r.msssim_db, "ciede2000": r.ciede2000}))
    return EXIT_OK


def _resolve_csv(name: str) -> Path:
    p = Path(name)
    if p.is_file():
        return p
    shipped = bd.fixture_path(name if name.endswith(".csv") else f"{name}.csv")
    if shipped.is_file():
        return shipped
    raise UsageError(f"fixture CSV not found: {name}")


def _select_curve(path: Path, metric: bd.Metric, label: str | None) -> bd.RDCurve:
    curves = bd.read_curves(path)
    accepted = {metric}
    if metric is bd.Metric.INV_CIEDE2000:
        accepted.add(bd.Metric.CIEDE2000)
    found = [c for (lab, m), c in curves.items() if m in accepted and (label is None or lab == label)]
    if not found:
        raise UsageError(f"{path}: no {metric.value} series" + (f" labelled {label!r}" if label else ""))
    if len(found) > 1:
        labels = sorted({c.label for c in found})
        raise UsageError(f"{path}: several {metric.value} series ({', '.join(labels)}); pick one with --*-label")
    return found[0]


def cmd_bdrate(cfg: CliConfig, metric: str, ref_label: str | None, test_label: str | None) -> int:
    try:
        m = bd.Metric.parse(metric)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ref = _select_curve(_resolve_csv(cfg.inputs[0]), m, ref_label)
    test = _select_curve(_resolve_csv(cfg.inputs[1]), m, test_label)
    print(kv_line({"bd_br_percent": bd.bd_rate(ref, test), "bd_quality": bd.bd_quality(ref, test)}))
    return EXIT_OK


def cmd_complexity(cfg: CliConfig) -> int:
    report = count_parameters(graph_for_profile(cfg.profile, cfg.context))
    print(kv_line({"profile": get_profile(cfg.profile).name, "total_params": report.total_params,
                   "kmac_per_pixel": report.kmac_per_pixel}))
    for name, b in report.per_branch.items():
        print(kv_line({"branch": name, "params": int(b["params"]), "kmac_per_pixel": b["kmac_per_pixel"]}))
    for block, n in report.params_per_block.items():
        print(kv_line({"block": block, "params": n}))
    print(kv_line({"reference_block": "residual_attention", "params": residual_attention_param_count(128)}))
    return EXIT_OK


def cmd_inspect(cfg: CliConfig, mode: str, amplitude: float) -> int:
    img = read_image(cfg.inputs[0])
    model = _load_model(cfg, cfg.context)
    result = encode(img, model)
    out_dir = Path(cfg.output)
    for name, br in result.branches.items():
        params = analysis.EntropyParams(br.mu, br.sigma)
        rates = analysis.channel_rates(br.y_hat, params)
        d = out_dir / name
        if mode == "latents":
            files = analysis.export_maps(analysis.latent_diagnostics(br.y_hat, params), d)
            analysis.write_rate_csv(rates, d / "rates.csv")
        else:
            files = analysis.export_impulses(analysis.impulse_set(model.branch(name), rates, amplitude), d)
        print(kv_line({"branch": name, "files": len(files), "rate_bits": sum(r.rate_bits for r in rates),
                       "dir": str(d)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slic", description="SLIC learned image codec")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="subcommand", required=True)

    def model_flags(sp, context=True):
        sp.add_argument("--seed", type=int, default=0, help="seed of the stand-in weights")
        sp.add_argument("--profile", default="canonical", choices=sorted(PROFILES))
        sp.add_argument("--weights", help="SLICWGT1 weight file (overrides --seed)")
        if context:
            sp.add_argument("--context", default="both", choices=["none", "luma", "both"])

    e = sub.add_parser("encode", help="compress an image")
    e.add_argument("input")
    e.add_argument("output")
    e.add_argument("--lambda-index", type=int, default=0, choices=range(len(metrics.LAMBDA_SETS)))
    model_flags(e)

    d = sub.add_parser("decode", help="decompress a bitstream")
    d.add_argument("input")
    d.add_argument("output")
    model_flags(d, context=False)

    m = sub.add_parser("metrics", help="PSNR, MS-SSIM and CIEDE2000 between two images")
    m.add_argument("reference")
    m.add_argument("test")

    b = sub.add_parser("bdrate", help="Bjøntegaard delta rate and quality between two RD curves")
    b.add_argument("reference", help="CSV path or shipped fixture name")
    b.add_argument("test", help="CSV path or shipped fixture name")
    b.add_argument("--metric", default="psnr", choices=["psnr", "msssim_db", "inv_ciede"])
    b.add_argument("--ref-label")
    b.add_argument("--test-label")

    c = sub.add_parser("complexity", help="parameter and kMAC/pixel accounting")
    c.add_argument("--profile", default="canonical", choices=sorted(PROFILES))
    c.add_argument("--context", default="both", choices=["none", "luma", "both"])

    i = sub.add_parser("inspect", help="export latent diagnostics or impulse responses")
    i.add_argument("input")
    i.add_argument("mode", choices=["latents", "impulses"])
    i.add_argument("--out-dir", required=True)
    i.add_argument("--amplitude", type=float, default=1.0)
    model_flags(i)
    return p


def _config(args) -> CliConfig:
    sc = args.subcommand
    inputs = {
        "encode": (args.__dict__.get("input"),),
        "decode": (args.__dict__.get("input"),),
        "metrics": (args.__dict__.get("reference"), args.__dict__.get("test")),
        "bdrate": (args.__dict__.get("reference"), args.__dict__.get("test")),
        "inspect": (args.__dict__.get("input"),),
    }.get(sc, ())
    output = getattr(args, "output", None) if sc != "inspect" else args.out_dir
    return CliConfig(
        subcommand=sc,
        inputs=tuple(inputs),
        output=output,
        seed=getattr(args, "seed", 0),
        profile=getattr(args, "profile", "canonical"),
        context=getattr(args, "context", "both"),
        lambda_index=getattr(args, "lambda_index", 0),
        weights=getattr(args, "weights", None),
        verbosity=args.verbose,
    )


def _thread_limit():
    n = os.environ.get("SLIC_THREADS")
    if not n:
        return contextlib.nullcontext()
    try:
        limit = int(n)
    except ValueError:
        raise UsageError(f"SLIC_THREADS must be an integer, got {n!r}") from None
    if limit < 1:
        raise UsageError("SLIC_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=limit)


def run(args) -> int:
    cfg = _config(args)
    with _thread_limit():
        if cfg.subcommand == "encode":
            return cmd_encode(cfg)
        if cfg.subcommand == "decode":
            return cmd_decode(cfg)
        if cfg.subcommand == "metrics":
            return cmd_metrics(cfg)
        if cfg.subcommand == "bdrate":
            return cmd_bdrate(cfg, args.metric, args.ref_label, args.test_label)
        if cfg.subcommand == "complexity":
            return cmd_complexity(cfg)
        return cmd_inspect(cfg, args.mode, args.amplitude)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    try:
        return run(args)
    except DecodeError as exc:
        print(f"error: bitstream: {exc}", file=sys.stderr)
        return EXIT_BITSTREAM
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ComputationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTATION
    except (ImageIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
