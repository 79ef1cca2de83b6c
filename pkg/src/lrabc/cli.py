"""Command-line entry point: ``lrabc {run,sweep,analytic,validate-trace}``.

Exit status is 0 on success and 1 when a sweep's trend verdict or a trace
check fails. Bad arguments or a run that cannot execute give 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from .checks import CHECKS, check_trace
from .config import ConfigError, ScenarioConfig, load_config
from .energy import EnergyCosts, RepairParams, Variant, analytic_repair_energy, repair_energy_ratios
from .engine import run
from .experiment import (DEFAULT_LADDER, claims_csv, compare, run_comparison_suite, summarize,
                         to_csv)
from .metrics import report_for
from .scenarios import line_with_bypass
from .state import Protocol
from .topology import DisconnectedTopology
from .trace import EventTrace

UNIT_COSTS = EnergyCosts(1, 1, 1, 1, 1, 1)


def int_range(text: str) -> tuple[int, ...]:
    """``7`` or ``1..10`` (inclusive) or ``200..1200:100``."""
    try:
        span, _, step = text.partition(":")
        lo, sep, hi = span.partition("..")
        lo, hi = int(lo), int(hi) if sep else int(lo)
        step = int(step) if step else 1
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N, N..M or N..M:STEP, got {text!r}") from None
    if hi < lo or step < 1:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return tuple(range(lo, hi + 1, step))


def _scenario(args) -> ScenarioConfig:
    if args.scenario == "line":
        config = line_with_bypass()
    else:
        config = load_config(args.config) if args.config else ScenarioConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "protocol", None) is not None:
        changes["protocol"] = Protocol(args.protocol)
    if getattr(args, "traffic", None) is not None:
        changes["traffic_total"] = args.traffic
    return config.with_(**changes) if changes else config


def _emit(text: str, out: str | None, name: str) -> None:
    """Write to stdout, or to ``name`` inside the ``out`` directory."""
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text, encoding="utf-8", newline="\n")


def cmd_run(args) -> int:
    config = _scenario(args)
    trace = run(config)
    trace_path = args.trace or (Path(args.out) / "trace.ndjson" if args.out else None)
    report = report_for(trace)
    if args.format == "json":
        _emit(json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n", args.out, "metrics.json")
    else:
        _emit(to_csv([report]), args.out, "metrics.csv")
    if trace_path is not None:
        trace.write(trace_path)
    return 0


def cmd_sweep(args) -> int:
    base = _scenario(args)
    protocols = tuple(Protocol) if args.protocol is None else (Protocol(args.protocol),)
    violations: dict | None = {} if args.validate else None
    trace_dir = args.trace_dir or (str(Path(args.out) / "traces") if args.out else None)
    if trace_dir:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    reports = run_comparison_suite(base, args.traffic_ladder, args.seeds, protocols, jobs=args.jobs,
                                   violations=violations, trace_dir=trace_dir)
    if args.format == "json":
        _emit(json.dumps([r.as_dict() for r in reports], indent=2) + "\n", args.out, "sweep.json")
    else:
        _emit(to_csv(reports), args.out, "sweep.csv")
    for v in compare(reports):
        print(f"traffic {v.traffic}: pdr {v.pdr_gain_pp:+.2f} pp, throughput "
              f"{'up' if v.throughput_higher else 'not up'}, delay "
              f"{'down' if v.delay_lower else 'not down'}, energy/pkt "
              f"{'down' if v.energy_lower else 'not down'}", file=sys.stderr)
    claims = summarize(reports)
    for c in claims:
        print(f"{c.name}: {'pass' if c.passed else 'fail'} ({c.detail})", file=sys.stderr)
    if args.out:
        _emit(claims_csv(claims), args.out, "verdicts.csv")
    status = 0 if all(c.passed for c in claims) else 1
    if violations is not None:
        found = [(key, v) for key, vs in sorted(violations.items()) for v in vs]
        for (protocol, traffic, seed), v in found:
            print(f"{protocol} traffic {traffic} seed {seed}: {v}", file=sys.stderr)
        print(f"{len(found)} violation(s) over {len(violations)} trace(s)", file=sys.stderr)
        status = 1 if found else status
    return status


def _frac(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def cmd_analytic(args) -> int:
    costs = UNIT_COSTS if args.costs is None else EnergyCosts(*args.costs, 0, 0)
    load = analytic_repair_energy(Variant.LOAD, args.load_nd, args.m, args.load_h, costs)
    ours = analytic_repair_energy(Variant.LRABC, args.lrabc_nd, args.m, args.lrabc_h, costs)
    nd_ratio, h_ratio = repair_energy_ratios(RepairParams(args.load_nd, args.load_h),
                                             RepairParams(args.lrabc_nd, args.lrabc_h))
    result = {"load": _frac(load), "lrabc": _frac(ours),
              "nd_ratio": _frac(nd_ratio), "h_ratio": _frac(h_ratio)}
    if args.format == "json":
        _emit(json.dumps(result, indent=2) + "\n", args.out, "analytic.json")
    else:
        _emit("quantity,value\n" + "".join(f"{k},{v}\n" for k, v in result.items()), args.out,
              "analytic.csv")
    return 0


def cmd_validate(args) -> int:
    trace = EventTrace.read(args.trace_file)
    violations = check_trace(trace, args.only)
    for v in violations:
        print(v)
    names = args.only or list(CHECKS)
    print(f"{len(violations)} violation(s) over checks: {', '.join(names)}")
    return 1 if violations else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrabc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    def scenario_args(p, ladder: bool = False):
        p.add_argument("--config", help="scenario file (key = value lines)")
        p.add_argument("--scenario", choices=("default", "line"), default="default",
                       help="built-in scenario when no --config is given")
        p.add_argument("--protocol", choices=[p.value for p in Protocol])
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--out", metavar="DIR",
                       help="write results (and traces) into this directory instead of stdout")
        if ladder:
            p.add_argument("--seeds", type=int_range, default=tuple(range(1, 11)), metavar="N..M")
            p.add_argument("--traffic", dest="traffic_ladder", type=int_range,
                           default=DEFAULT_LADDER, metavar="N..M:STEP")
            p.add_argument("--jobs", type=int, default=1, help="worker processes")
            p.add_argument("--validate", action="store_true",
                           help="check invariants on every trace; exit 1 on any violation")
            p.add_argument("--trace-dir", help="write every run's NDJSON trace here "
                                               "(default DIR/traces when --out is given)")
        else:
            p.add_argument("--seed", type=int)
            p.add_argument("--traffic", type=int, help="total packets over all flows")

    p = sub.add_parser("run", help="simulate one scenario")
    scenario_args(p)
    p.add_argument("--trace", help="write the NDJSON event trace to this file "
                                   "(default DIR/trace.ndjson when --out is given)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="both protocols over a traffic ladder and seeds")
    scenario_args(p, ladder=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analytic", help="closed-form repair energy of both protocols")
    p.add_argument("--load-nd", type=int, default=9)
    p.add_argument("--load-h", type=int, default=7)
    p.add_argument("--lrabc-nd", type=int, default=4)
    p.add_argument("--lrabc-h", type=int, default=2)
    p.add_argument("--m", type=int, default=2, help="mean forwarders heard per node")
    p.add_argument("--costs", type=float, nargs=4, metavar=("REQ_T", "REQ_R", "REP_T", "REP_R"),
                   help="per-operation charges (default: one unit each)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("validate-trace", help="check protocol invariants on a stored trace")
    p.add_argument("trace_file")
    p.add_argument("--only", type=lambda s: s.split(","), help="comma-separated check names")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "only", None):
        unknown = set(args.only) - set(CHECKS)
        if unknown:
            parser.error(f"unknown check(s): {', '.join(sorted(unknown))}")
    try:
        return args.func(args)
    except (ConfigError, DisconnectedTopology, OSError, ValueError) as exc:
        print(f"lrabc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
