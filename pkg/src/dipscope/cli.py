"""Command-line entry point: one subcommand per experiment."""

import argparse
import json
import sys

from .experiments import default_config, run_experiment

SUBCOMMANDS = {
    "exp-1d": "1d",
    "exp-divergence": "divergence",
    "exp-denoise": "denoise",
    "exp-failure": "failure",
    "exp-capacity": "capacity",
    "exp-stride": "stride",
    "exp-spectrum": "spectrum",
    "upsample-response": "upsample_response",
    "grad-check": "grad_check",
}

HELP = {
    "exp-1d": "two-sine convergence times for a 1D model",
    "exp-divergence": "twin-trajectory divergence across pattern coverage",
    "exp-denoise": "best-PSNR denoising comparison across architectures",
    "exp-failure": "low-frequency-noise failure case plus Gaussian control",
    "exp-capacity": "depth/width sweep of two-sine convergence times",
    "exp-stride": "decoder stride comparison via spectrum error maps",
    "exp-spectrum": "radial output spectra at fixed iterations",
    "upsample-response": "analytic vs measured upsampler frequency response",
    "grad-check": "central-difference audit of all differentiable ops",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dipscope",
        description="Deep-image-prior spectral bias experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="JSON file overriding the defaults")
        p.add_argument("--out", help="output directory (default runs/<kind>)")
        p.add_argument("--seeds", help="comma-separated seed list, e.g. 0,1,2")
        p.add_argument("--workers", type=int, help="concurrent fit jobs")
    return parser


def _parse_seeds(text):
    try:
        seeds = [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise ValueError(f"--seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise ValueError("--seeds must list at least one seed")
    return seeds


def config_from_args(args):
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
        if not isinstance(overrides, dict):
            raise ValueError("config file must hold a JSON object")
    kind = SUBCOMMANDS[args.command]
    if "kind" in overrides and overrides["kind"] != kind:
        raise ValueError(
            f"config kind {overrides['kind']!r} does not match subcommand {args.command!r}"
        )
    overrides["kind"] = kind
    cfg = default_config(
        kind,
        overrides,
        out_dir=args.out,
        workers=args.workers,
        seeds=_parse_seeds(args.seeds) if args.seeds else None,
    )
    return cfg


def _fail(kind, exc, code):
    record = {"error": type(exc).__name__, "message": str(exc), "experiment": kind}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    kind = SUBCOMMANDS[args.command]
    try:
        cfg = config_from_args(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        return _fail(kind, exc, 2)
    try:
        report = run_experiment(cfg)
    except (ValueError, RuntimeError, OSError) as exc:
        return _fail(kind, exc, 1)
    summary = {k: report.aggregate[k] for k in list(report.aggregate)[:4]}
    print(
        f"{args.command}: wrote {len(report.manifest)} artifacts to {cfg.out_dir} "
        f"in {report.wall_clock_s:.1f}s"
    )
    print(json.dumps({"aggregate_head": summary}, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
