"""Command line: ``pathlimit run|validate <config>`` and ``pathlimit schema``.

Exit status 0 means every check passed, 1 that at least one check failed
(see failures.json in the output directory), 2 a configuration error.
``PATHLIMIT_THREADS`` caps the BLAS thread pools.
"""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext

from .config import ConfigError, load_config, schema_text

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


def _thread_limit():
    value = os.environ.get("PATHLIMIT_THREADS")
    if not value:
        return nullcontext()
    try:
        threads = int(value)
        if threads < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"must be a positive integer, got {value!r}", "PATHLIMIT_THREADS") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pathlimit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a config file or a manifest.json")
    run.add_argument("config")
    run.add_argument("--output-dir", help="override output_dir from the config")
    check = sub.add_parser("validate", help="parse and check a config without running it")
    check.add_argument("config")
    sub.add_parser("schema", help="print the config schema")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "schema":
        sys.stdout.write(schema_text())
        return EXIT_OK
    try:
        config = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok ({config.experiment}, sha256 {config.digest[:12]})")
            return EXIT_OK
        from .experiments import run_experiment

        with _thread_limit():
            status, directory = run_experiment(config, args.output_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read or write: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    word = "passed" if status == EXIT_OK else "FAILED (see failures.json)"
    print(f"{config.experiment}: checks {word}; artifacts in {directory}")
    return status
