"""Command-line entry point: ``aspca {generate,spectrum,run,gradcheck}``.

Exit codes: 0 success, 1 harness error (I/O, missing inputs, failed
gradient check), 2 invalid config or arguments.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .exceptions import InvalidArgument, InvalidState
from .experiment import CASES, ExperimentConfig, cmd_generate, cmd_gradcheck, cmd_run, cmd_spectrum

EXIT_OK, EXIT_HARNESS, EXIT_INVALID = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _seed(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment JSON (built-in defaults if omitted)")
    common.add_argument("--seed", type=_seed, help="override master_seed")
    common.add_argument("--out", help="override output_dir")
    common.add_argument("--case", choices=CASES, help="override case")
    common.add_argument("--strategies", help="comma-separated methods, e.g. pca,rotation")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="aspca", description="Adaptive PCA history matching experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="write prior dataset, truth and observations")
    sp = sub.add_parser("spectrum", parents=[common], help="eigenvalue spectrum of the prior dataset")
    sp.add_argument("--dataset", type=Path, help="dataset JSON (default: <out>/dataset.json)")
    sub.add_parser("run", parents=[common], help="run the requested methods on generated inputs")
    gc = sub.add_parser("gradcheck", parents=[common], help="adjoint vs finite-difference gradients")
    gc.add_argument("--matched", action="store_true", help="check at the truth with noise-free data")
    return parser


def load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    strategies = None
    if args.strategies is not None:
        strategies = tuple(s.strip() for s in args.strategies.split(",") if s.strip())
    return config.with_overrides(master_seed=args.seed, output_dir=args.out, case=args.case,
                                 strategies=strategies)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
        if args.command == "generate":
            for kind, path in cmd_generate(config).items():
                print(f"{kind}: {path}")
        elif args.command == "spectrum":
            dataset = args.dataset or config.out / "dataset.json"
            out = config.out / "spectrum.csv"
            table = cmd_spectrum(dataset, out)
            print(f"{table.shape[0]} eigenvalues written to {out}")
        elif args.command == "run":
            for method, s in cmd_run(config).items():
                print(f"{config.case:7s} {method:10s} status={s['status']:18s} "
                      f"objective={s.get('final_objective', float('nan')):.6e} "
                      f"rmse={s.get('truth_rmse', float('nan')):.4e}")
        elif args.command == "gradcheck":
            report = cmd_gradcheck(config, matched=args.matched)
            print(json.dumps(report, indent=2))
            if not report["passed"]:
                return EXIT_HARNESS
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (InvalidState, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HARNESS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
