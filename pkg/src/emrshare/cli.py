"""Command line: ``run`` a scenario, ``inspect`` or ``verify`` an artifact directory.

Exit codes: 0 success, 2 parse error, 3 invariant violation, 4 missing artifact.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .artifacts import (EXIT_INVARIANT, EXIT_MISSING, EXIT_OK, EXIT_PARSE, MissingArtifact,
                        inspect_dir, verify_dir, write_artifacts)
from .errors import EmrShareError
from .scenario import ScenarioError, load_scenario
from .workflow import run_scenario


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emrshare", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario and write artifacts")
    run.add_argument("--scenario", required=True)
    run.add_argument("--seed", type=_u64, help="override the scenario seed")
    run.add_argument("--out", required=True, help="artifact directory")
    run.add_argument("--profile", choices=("test", "production"), help="override the group profile")

    ins = sub.add_parser("inspect", help="render a dump from an artifact directory")
    ins.add_argument("what", choices=("chain", "credits", "logs"))
    ins.add_argument("--out", required=True, help="artifact directory")
    ins.add_argument("--actor", help="filter logs by actor name or account id")

    ver = sub.add_parser("verify", help="re-check an artifact directory offline")
    ver.add_argument("--out", required=True, help="artifact directory")
    return parser


def _run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    result = run_scenario(scenario, args.seed, args.profile)
    try:
        write_artifacts(result, args.out)
    except EmrShareError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    for check in result.checks:
        print(check.line())
    print(f"height {result.chain.height}  artifacts {args.out}")
    return EXIT_OK if result.ok else EXIT_INVARIANT


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return _run(args)
    if args.command == "inspect":
        try:
            print("\n".join(inspect_dir(args.out, args.what, args.actor)))
        except MissingArtifact as exc:
            print(f"not found: {exc}", file=sys.stderr)
            return EXIT_MISSING
        return EXIT_OK
    report = verify_dir(args.out)
    print("\n".join(report.lines))
    return report.code


if __name__ == "__main__":
    sys.exit(main())
