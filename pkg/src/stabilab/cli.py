"""Command-line entry point.

    stabilab <coverage|rate|stability|efron-stein|bounds-table>
        --config <path.json> [--out <dir>] [--seed <u64>] [--reps <int>]
        [--emit csv,json,svg]

Exit codes: 0 success, 2 config error, 3 precondition failure, 4 an
inequality was empirically violated beyond the Monte Carlo slack (a test
failure signal, not a crash).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .harness import (
    ConfigError,
    PreconditionError,
    emit_report,
    load_config,
    run_experiment,
)

_COMMAND_KINDS = {
    "coverage": "coverage",
    "rate": "rate",
    "stability": "stability_sweep",
    "efron-stein": "efron_stein",
    "bounds-table": "bounds_table",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stabilab",
        description="Seeded Monte Carlo verification of leave-one-out "
        "generalisation bounds",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in _COMMAND_KINDS:
        p = sub.add_parser(command, help=f"run the {command} experiment")
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--seed", type=int, default=None, help="override base_seed")
        p.add_argument("--reps", type=int, default=None, help="override reps")
        p.add_argument(
            "--emit",
            default="csv,json",
            help="comma-separated output formats (csv,json,svg)",
        )
    return parser


def _exit_code(report) -> int:
    return 0 if report.all_pass else 4


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    expected_kind = _COMMAND_KINDS[args.command]
    try:
        config = load_config(args.config)
        if config.kind != expected_kind:
            raise ConfigError(
                f"config kind {config.kind!r} does not match command "
                f"{args.command!r} (expected {expected_kind!r})"
            )
        overrides = {}
        if args.seed is not None:
            overrides["base_seed"] = args.seed
        if args.reps is not None:
            overrides["reps"] = args.reps
        if args.out is not None:
            overrides["out_dir"] = args.out
        if overrides:
            config = dataclasses.replace(config, **overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        report = run_experiment(config)
        formats = args.emit.split(",")
        written = emit_report(report, formats)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PreconditionError as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return 3

    n_rows = len(report.rows)
    print(f"{report.kind}: {n_rows} rows, all_pass={report.all_pass}")
    if report.kind == "rate":
        print(
            f"slope={report.slope:.4f} "
            f"ci=[{report.slope_ci_low:.4f}, {report.slope_ci_high:.4f}]"
        )
    for path in written:
        print(f"wrote {path}")
    if not report.all_pass:
        print("invariant violation: an inequality failed beyond MC slack", file=sys.stderr)
    return _exit_code(report)


if __name__ == "__main__":
    raise SystemExit(main())
