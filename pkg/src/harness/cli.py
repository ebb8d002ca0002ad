"""
Command line entry point.

    vmpc run --config quad.json [--steps 21] [--maxiter 1] [--algorithm 2] [--output-dir runs/x]
    vmpc validate --config quad.json
    vmpc dump-conic --config quad.json [--out rhocp.json]
    vmpc compare-linearizations --config fpu.json

Exit codes: 0 ok, 1 configuration error, 2 runtime failure.
"""

from typing import List, Optional
import argparse
import json
import logging
import sys

from src.errors import ConfigError, VmpcError
from src.harness.config import load_config
from src.harness.runner import ExperimentRunner

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vmpc", description="Variational integrators and tube MPC experiments")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the configured pipeline")
    run.add_argument("--config", required=True)
    run.add_argument("--output-dir")
    run.add_argument("--steps", type=int)
    run.add_argument("--maxiter", type=int)
    run.add_argument("--algorithm", type=int, choices=(1, 2))
    run.add_argument("--seed", type=int)
    run.add_argument("--dump-conic", action="store_const", const=True)

    validate = sub.add_parser("validate", help="check a configuration without running it")
    validate.add_argument("--config", required=True)

    dump = sub.add_parser("dump-conic", help="write the first RHOCP in JSON standard form")
    dump.add_argument("--config", required=True)
    dump.add_argument("--out")

    compare = sub.add_parser("compare-linearizations", help="Jacobian against variational linearization")
    compare.add_argument("--config", required=True)
    compare.add_argument("--steps", type=int)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    keys = ("output_dir", "steps", "maxiter", "algorithm", "seed", "dump_conic")
    return {k: getattr(args, k, None) for k in keys}


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = load_config(args.config, _overrides(args))
    except ConfigError as e:
        print(f"[config] {e}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        print(json.dumps({"valid": True, "name": config.name, "pipeline": config.pipeline}))
        return EXIT_OK

    runner = ExperimentRunner()
    stage = {"run": config.pipeline, "dump-conic": "dump-conic", "compare-linearizations": "linearize-compare"}[args.command]
    try:
        if args.command == "run":
            summary = runner.run(config)
            print(summary.model_dump_json(indent=2))
        elif args.command == "dump-conic":
            print(runner.dump_conic_for(config, args.out))
        else:
            summary = runner.run(config.model_copy(update={"pipeline": "linearize-compare"}))
            print(json.dumps(summary.metrics, indent=2))
    except ConfigError as e:
        print(f"[{stage}] {e}", file=sys.stderr)
        return EXIT_CONFIG
    except VmpcError as e:
        logger.error("%s failed: %s", stage, e)
        print(f"[{stage}] {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
