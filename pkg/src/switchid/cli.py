"""Command-line front end.

Subcommands:

* ``switchid run <config.yaml>``  : simulate + identify, write artifacts
* ``switchid check <config.yaml>``: run, then gate on the report (exit 0/1)
* ``switchid demo``               : the built-in flagship scenario

Common flags ``--seed``, ``--t-end``, ``--dt``, ``--out-dir``, ``--quiet``
override the scenario file.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import report_check, run
from .plant import DivergenceError
from .scenario import ScenarioError, flagship_config, load_scenario

__all__ = ["main"]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="override sim.seed")
    parser.add_argument("--t-end", type=float, default=None, help="override sim.t_end")
    parser.add_argument("--dt", type=float, default=None, help="override sim.dt")
    parser.add_argument("--out-dir", default=None, help="artifact directory")
    parser.add_argument("--quiet", action="store_true", help="log warnings only")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="switchid",
        description="Online identification of switched affine systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario and write trace/report")
    p_run.add_argument("config", help="scenario YAML file")
    _add_common(p_run)
    p_check = sub.add_parser("check", help="run a scenario and gate on the report")
    p_check.add_argument("config", help="scenario YAML file")
    _add_common(p_check)
    p_demo = sub.add_parser("demo", help="run the built-in flagship scenario")
    _add_common(p_demo)
    return parser


def _load(args) -> "ScenarioConfig":
    if args.command == "demo":
        config = flagship_config()
    else:
        config = load_scenario(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.t_end is not None:
        overrides["t_end"] = args.t_end
    if args.dt is not None:
        overrides["dt"] = args.dt
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    return config.replace(**overrides) if overrides else config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _load(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        harness_run = run(config)
    except DivergenceError as exc:
        print(f"error: run aborted: {exc} (t={exc.time:.6g})", file=sys.stderr)
        return 1
    report = harness_run.report
    if not args.quiet:
        print(report.to_text(), end="")
    if args.command != "check":
        return 0
    items = report_check(report)
    ok = all(item.passed for item in items)
    for item in items:
        print(f"[{'PASS' if item.passed else 'FAIL'}] {item.name}: {item.detail}")
    print(f"check: {'PASS' if ok else 'FAIL'} "
          f"({sum(i.passed for i in items)}/{len(items)} criteria)")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
