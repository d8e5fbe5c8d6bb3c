"""Command line entry point.

Exit codes: 0 success, 2 invalid input (configuration or data format),
1 any other failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .pipeline.config import EXPERIMENTS, ConfigError, load_config
from .pipeline.tables import CsvFormatError

log = logging.getLogger("rfkernels")

HELP = {
    "gram": "fit one forest and export its Gram matrix at the training points",
    "kpca": "kernel PCA comparison (linear, RBF, k0, kP) with silhouette and linear probe",
    "gvi-bench": "GVI / MDI / MDA benchmark over the synthetic scenarios",
    "igb-trace": "Euler path of infinitesimal gradient boosting, one row per step",
    "neff": "effective sample size of each forest family",
}


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _threads(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfkernels", description="Random Forest kernel toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", metavar="PATH", help="key = value manifest")
        p.add_argument("--seed", type=_seed, default=None, help="master seed (overrides the manifest)")
        p.add_argument("--out", metavar="DIR", default="out", help="output root (default: out)")
        p.add_argument("--threads", type=_threads, default=1, help="worker threads for tree growing")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    from .pipeline.experiments import RUNNERS

    overrides = {} if args.seed is None else {"seed": str(args.seed)}
    try:
        cfg = load_config(args.command, args.config, overrides)
        seed = cfg["seed"]
        log.info("running %s with seed %d", args.command, seed)
        summary = RUNNERS[args.command](cfg, seed, args.out, threads=args.threads)
    except (ConfigError, CsvFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}/{cfg['name']}/{seed}/ ({summary['experiment']})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
