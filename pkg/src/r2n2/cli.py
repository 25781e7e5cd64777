"""Command-line entry point.

Subcommands:
  run <preset>   train/evaluate one named experiment and emit artifacts
  certify        spectral-norm convergence certificate for saved parameters
  grad-check     adjoint-vs-finite-difference gradient validation suite

Exit codes: 0 success, 1 failed check, 2 training hit the divergence
guard, 3 configuration error. For ``run``, command-line flags override
config-file fields, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import sys

from .analysis import certify_matrix
from .experiments import ConfigError, ExperimentConfig, PRESET_NAMES, run_grad_check, run_preset
from .problems import BUILTIN_MATRIX_IDS, builtin_matrix
from .superstructure import load_parameters

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_DIVERGED = 2
EXIT_CONFIG = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="r2n2",
        description="Train and evaluate learned iterative-solver superstructures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a named experiment preset")
    run_p.add_argument("preset", help=f"one of: {', '.join(PRESET_NAMES)}")
    run_p.add_argument("--config", help="JSON config file; flags override its fields")
    run_p.add_argument("--seed", type=int, help="training seed")
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--epochs", type=int, help="training epochs")
    run_p.add_argument("--threads", type=int, help="worker threads for per-sample terms")

    cert = sub.add_parser("certify", help="certify convergence on a builtin matrix")
    cert.add_argument("--params", required=True, help="saved parameter JSON file")
    cert.add_argument("--matrix", required=True, help="builtin matrix id (A1..A19)")

    gc = sub.add_parser("grad-check", help="adjoint gradient validation suite")
    gc.add_argument("--configs", type=int, default=100, help="number of random configurations")
    gc.add_argument("--seed", type=int, default=2024)
    gc.add_argument("--tolerance", type=float, default=1e-5)
    return parser


def _cmd_run(args) -> int:
    mapping: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if not isinstance(doc, dict):
            print(f"error: config {args.config} must hold a JSON object", file=sys.stderr)
            return EXIT_CONFIG
        mapping.update(doc)
    for key, value in (
        ("seed", args.seed),
        ("out_dir", args.out),
        ("epochs", args.epochs),
        ("threads", args.threads),
    ):
        if value is not None:
            mapping[key] = value
    mapping["preset"] = args.preset

    try:
        config = ExperimentConfig.from_mapping(mapping)
        result = run_preset(args.preset, config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: cannot write artifacts: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    for key, value in result.summary.items():
        print(f"{key}: {value}")
    for path in result.artifacts:
        print(f"wrote {path}")
    return result.exit_code


def _cmd_certify(args) -> int:
    try:
        params, cfg = load_parameters(args.params)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot load parameters from {args.params}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.matrix not in BUILTIN_MATRIX_IDS:
        print(
            f"error: unknown matrix {args.matrix!r}; choose from "
            f"{BUILTIN_MATRIX_IDS[0]}..{BUILTIN_MATRIX_IDS[-1]}",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    try:
        result = certify_matrix(params, cfg, builtin_matrix(args.matrix))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"matrix: {args.matrix}")
    print(f"operator_norm: {result.norm!r}")
    print(f"convergent: {str(result.convergent).lower()}")
    print(f"marginal: {str(result.marginal).lower()}")
    print("zeta: " + " ".join(repr(float(z)) for z in result.zeta))
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    report = run_grad_check(
        num_configs=args.configs, seed=args.seed, tolerance=args.tolerance
    )
    for family, worst in sorted(report["per_family_max"].items()):
        print(f"{family}: max relative error {worst:.3e}")
    print(f"overall: {report['max_rel_error']:.3e} over {report['num_configs']} configs "
          f"in {report['elapsed_seconds']:.1f}s")
    print(f"tolerance: {report['tolerance']:.1e}")
    print("PASS" if report["passed"] else "FAIL")
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "certify":
        return _cmd_certify(args)
    return _cmd_grad_check(args)


if __name__ == "__main__":
    sys.exit(main())
