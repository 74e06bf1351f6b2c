"""Command-line driver for the experiment registry.

Three commands::

    mjspectra run <config.toml>       # validate, run, write outputs + manifest
    mjspectra validate <config.toml>  # parse + validate only, touch nothing
    mjspectra list                    # catalog of experiment kinds

Exit codes: 0 success, 2 config/validation problems, 3 numerical failures
(the failing module's error is printed to stderr).  Output directories
resolve against $MJSPECTRA_OUTPUT_ROOT when the config path is relative.
"""

import argparse
import sys

from . import __version__, experiments
from .config import load_config, resolve_output_dir
from .errors import ConfigInvalid, MjsError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mjspectra",
        description="Batch driver for semiclassical torus-spectrum experiments.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the experiment described by a config")
    run_p.add_argument("config", help="TOML config file")
    run_p.add_argument("--output-dir", default=None,
                       help="override the config's output directory")

    sub.add_parser("list", help="list experiment kinds and required parameters")

    val_p = sub.add_parser("validate",
                           help="parse and validate a config without running it")
    val_p.add_argument("config", help="TOML config file")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            print(experiments.list_experiments())
            return EXIT_OK
        cfg = load_config(args.config)
        if args.command == "validate":
            experiments.validate_config(cfg)
            print(f"OK: {cfg.kind} config {cfg.path} "
                  f"(hash {cfg.config_hash[:12]})")
            return EXIT_OK
        manifest = experiments.run(cfg, output_dir=args.output_dir)
        outdir = (args.output_dir if args.output_dir is not None
                  else resolve_output_dir(cfg))
        print(f"done: {cfg.kind} wrote {len(manifest.outputs)} files to "
              f"{outdir} (manifest.json has the checksums)")
        return EXIT_OK
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MjsError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}",
              file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
