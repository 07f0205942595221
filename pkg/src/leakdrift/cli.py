"""Command line entry point: ``leakdrift <generate|modelloss|dist|localize|shape|all> [flags]``.

Exit codes: 0 success, 1 configuration or usage error, 2 failure while running.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .core import ConfigError
from .harness import STUDIES, ExperimentConfig, generate_files, run_studies, write_manifest

log = logging.getLogger("leakdrift")

COMMANDS = ("generate",) + STUDIES + ("all",)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; 2 is reserved for runtime failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="leakdrift", description="Leak detection as drift detection on water-network pressure streams.")
    p.add_argument("command", choices=COMMANDS, help="'all' runs modelloss, dist, localize and shape")
    p.add_argument("--config", type=Path, help="experiment config JSON (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("--sizes", type=_floats, help="leak diameters in mm, e.g. 7,19")
    p.add_argument("--displacements", type=_ints, help="split minus onset in days, e.g. 0,3,6")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {"master_seed": args.seed, "sizes": args.sizes, "displacements": args.displacements}
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    return cfg.with_overrides(**overrides)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
    except UsageError as exc:
        print(f"leakdrift: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"leakdrift: config error: {exc}", file=sys.stderr)
        return 1
    start = time.perf_counter()
    try:
        if args.command == "generate":
            paths = generate_files(cfg, cfg.output_dir)
            write_manifest(cfg, paths, cfg.output_dir, ["generate"])
        else:
            studies = STUDIES if args.command == "all" else (args.command,)
            run_studies(cfg, studies, jobs=args.jobs)
    except ConfigError as exc:
        # some fields (pipe ids, INP paths) can only be checked once the network is loaded
        print(f"leakdrift: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every other failure maps to exit code 2
        log.debug("run failed", exc_info=True)
        print(f"leakdrift: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    log.info("%s finished in %.1f s, outputs in %s", args.command, time.perf_counter() - start, cfg.output_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
