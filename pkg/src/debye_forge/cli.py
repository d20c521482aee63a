"""debye-forge command line: crystal / response / macro / multiscale /
bands / verify subcommands.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
4 regime violation (with --strict-regime).
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, parse_config


def _add_common(p):
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="override the configured output directory")
    p.add_argument(
        "--threads",
        type=int,
        help="cap worker threads (mirrors DEBYE_FORGE_THREADS)",
    )
    p.add_argument(
        "--lax",
        action="store_true",
        help="accept unknown configuration keys (forward compatibility)",
    )
    p.add_argument(
        "--strict-regime",
        action="store_true",
        help="fail (exit 4) when the asymptotic regime conditions are violated",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="debye-forge",
        description=(
            "Finite-temperature crystal solver and homogenized "
            "Poisson-Boltzmann coefficient extractor"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {}
    for name, desc in [
        ("crystal", "solve or construct the periodic crystal state"),
        ("bands", "export the band structure and gap report"),
        ("response", "compute M fibers and homogenized coefficients"),
        ("macro", "solve the homogenized Poisson-Boltzmann equation"),
        ("multiscale", "run the deformed-crystal multiscale verification"),
    ]:
        p = sub.add_parser(name, help=desc)
        _add_common(p)
        parsers[name] = p
    for name in ("bands", "response", "multiscale"):
        parsers[name].add_argument(
            "--state", help="crystal bundle directory (defaults to <out>/crystal)"
        )
    parsers["response"].add_argument("--delta", type=float, help="scale ratio override")
    parsers["response"].add_argument("--kmax", type=float, help="b(k) sample radius override")
    parsers["response"].add_argument("--ksamples", type=int, help="b(k) sample count override")
    parsers["macro"].add_argument("--nu", type=float, help="screening mass override")
    parsers["macro"].add_argument(
        "--eps", help="permittivity override, JSON matrix (e.g. '[[1.0]]')"
    )
    parsers["multiscale"].add_argument(
        "--delta-list", help="comma-separated scale ratios (e.g. 0.125,0.0625)"
    )
    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--config", help="unused; accepted for symmetry")
    v.add_argument("--quick", action="store_true", help="skip the slow criteria")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.command == "verify":
        from .acceptance import run_acceptance

        results = run_acceptance(quick=args.quick)
        failed = [r for r in results if not r.passed]
        return 0 if not failed else 3

    try:
        cfg = parse_config(args.config, lax=args.lax)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        cfg["output_dir"] = args.out
    if args.threads:
        cfg["threads"] = args.threads
        os.environ["DEBYE_FORGE_THREADS"] = str(args.threads)
    elif os.environ.get("DEBYE_FORGE_THREADS"):
        cfg["threads"] = int(os.environ["DEBYE_FORGE_THREADS"])
    if getattr(args, "state", None):
        cfg["_crystal_bundle"] = args.state
    if getattr(args, "delta", None):
        cfg["response"]["delta"] = args.delta
    if getattr(args, "kmax", None):
        cfg["response"]["kmax"] = args.kmax
    if getattr(args, "ksamples", None):
        cfg["response"]["ksamples"] = args.ksamples
    if getattr(args, "nu", None):
        cfg["macro"]["nu"] = args.nu
    if getattr(args, "eps", None):
        import json as _json

        cfg["macro"]["eps"] = _json.loads(args.eps)
    if getattr(args, "delta_list", None):
        cfg["multiscale"]["delta_list"] = [
            float(x) for x in args.delta_list.split(",")
        ]

    from .pipeline import StageError, run_pipeline

    try:
        run_pipeline(cfg, {args.command}, strict_regime=args.strict_regime)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # numerical failures surface as exit 3
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
