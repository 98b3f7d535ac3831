"""Command line: run, sweep, check and plot.

Exit codes: 0 success, 2 invalid scenario (or bad arguments), 3 a checker
found a violation.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ..errors import FogCoordError, InvalidScenario
from ..simnet import MUTANTS, Simulation
from ..trace import TraceLog
from . import checkers, metrics, scenario_file
from .plot import plot_summary
from .sweep import parse_dimension, sweep, write_summary

OUT_ENV = "FOGCOORD_OUT"
EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 2, 3

log = logging.getLogger("fogcoord")


def _out_dir(arg: str | None) -> Path:
    path = Path(arg or os.environ.get(OUT_ENV) or "out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _report(verdicts: list[checkers.Verdict]) -> int:
    for v in verdicts:
        print(v.line())
    return EXIT_OK if all(v.ok for v in verdicts) else EXIT_CHECK


def cmd_run(args) -> int:
    sc = scenario_file.load(args.scenario)
    result = Simulation(sc, seed=args.seed, mutant=args.mutant).run()
    out = _out_dir(args.out)
    result.trace.write(out / "trace.csv")
    metrics.write(result.trace, out / "metrics.csv")
    counts: dict[str, int] = {}
    for r in result.outcomes.values():
        counts[r.status] = counts.get(r.status, 0) + 1
    print(f"{sc.name}: seed {result.seed}, {len(result.outcomes)} ops "
          f"({', '.join(f'{k}={v}' for k, v in sorted(counts.items()))}), end {result.end_us / 1000:g} ms")
    print(f"wrote {out / 'trace.csv'} and {out / 'metrics.csv'}")
    if result.info.get("time_limit_exceeded"):
        print(f"warning: time limit {result.end_us / 1000:g} ms reached with operations outstanding; "
              "trace is partial", file=sys.stderr)
    if args.check:
        return _report(checkers.check_all(result.trace, sc))
    return EXIT_OK


def cmd_check(args) -> int:
    sc = scenario_file.load(args.scenario)
    trace = TraceLog.read(args.trace)
    return _report(checkers.check_all(trace, sc))


def cmd_sweep(args) -> int:
    template = scenario_file.load(args.template)
    try:
        dims = dict(parse_dimension(d) for d in args.dim)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    rows = sweep(template, dims, jobs=args.jobs)
    out = _out_dir(args.out)
    path = write_summary(rows, out / "summary.csv")
    failed = sum(1 for r in rows if r.get("error"))
    print(f"{len(rows)} cells ({failed} failed); wrote {path}")
    if args.plot:
        for p in plot_summary(path, out):
            print(f"wrote {p}")
    return EXIT_OK


def cmd_plot(args) -> int:
    for p in plot_summary(args.summary, _out_dir(args.out)):
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fogcoord", description="Fog coordination simulator and checkers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario, write trace.csv and metrics.csv")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--check", action="store_true", help="run all checkers; exit 3 on a violation")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./out)")
    p.add_argument("--mutant", choices=sorted(MUTANTS), default=None,
                   help="inject a known-bad consensus variant (checker self-test)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter cross product over a template scenario")
    p.add_argument("template")
    p.add_argument("--dim", action="append", default=[], help="name=v1,v2 (strategy, level, write_ratio, "
                                                              "latency_scale, seed); repeatable")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", action="store_true", help="also render PNG charts")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="re-run the checkers on a stored trace")
    p.add_argument("trace")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("plot", help="render charts from a sweep summary.csv")
    p.add_argument("summary")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InvalidScenario as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FogCoordError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
