"""Command-line entry point: ``thinchannel run|validate --config FILE``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import describe_defaults, load_config
from .errors import ConfigError
from .runner import EXIT_ERROR, run

log = logging.getLogger("thinchannel")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="thinchannel",
        description="Neumann spectra of domains with thin exterior channels.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config keys and defaults:\n" + describe_defaults(),
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment",
                           formatter_class=argparse.RawDescriptionHelpFormatter,
                           epilog="config keys and defaults:\n" + describe_defaults())
    p_run.add_argument("--config", required=True, help="experiment config file")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel sweep rows (default 1)")
    p_run.add_argument("--out", default=None,
                       help="output directory (default: [experiment] output_path)")
    p_run.add_argument("--dump-mesh", action="store_true",
                       help="also write plain-text mesh listings")

    p_val = sub.add_parser("validate", help="parse the config and report problems")
    p_val.add_argument("--config", required=True, help="experiment config file")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.command == "validate":
        print(f"ok: {cfg.experiment}")
        return 0
    try:
        code, outcome = run(cfg, out_dir=args.out, jobs=max(1, args.jobs),
                            dump_mesh=args.dump_mesh)
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        log.exception("experiment failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for check in outcome.checks:
        print(f"{'PASS' if check.passed else 'FAIL'} {check.name}")
    for err in outcome.errors:
        print(f"ERROR {err}")
    return code


if __name__ == "__main__":
    sys.exit(main())
