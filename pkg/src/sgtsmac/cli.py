"""Command-line front end.

    sgtsmac run <scenario>       full event trace
    sgtsmac schedule <scenario>  horizon table dump + validation
    sgtsmac sweep <scenario>     shared-slot power sweep
    sgtsmac latency <scenario>   GTS latency statistics

Exit codes: 0 success, 1 validation violations, 2 usage or parse errors.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .engine import trace_digest, trace_lines
from .harness import (
    NonMonotone,
    BadTopology,
    beacon_overlaps,
    estimate_window,
    exclusivity_violations,
    latency_bound,
    latency_from_trace,
    run_scenario,
    run_sgts_sweep,
    sweep_table,
)
from .scenario import ParseError, Scenario, build_table, load_scenario, scenario_json
from .schedule import ScheduleError, dump_schedule, validate_schedule


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(f"{self.prog}: {message}")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario file, or a bundled name (fig3/fig7/fig9.scenario)")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--out", type=Path, default=None, help="write results into this directory")
    common.add_argument("--format", choices=("trace", "summary", "table"), default=None)
    p = _Parser(prog="sgtsmac", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("run", parents=[common], help="run the scenario, emit the event trace")
    sub.add_parser("schedule", parents=[common], help="dump and validate the schedule")
    sw = sub.add_parser("sweep", parents=[common], help="shared-slot power sweep")
    sw.add_argument("--trials", type=int, default=None, help="trials per power step")
    sw.add_argument("--step", type=float, default=None, help="power step in dB")
    sub.add_parser("latency", parents=[common], help="GTS access latency statistics")
    return p


def _emit(text: str, out: Path | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _header(s: Scenario) -> str:
    return f"# config {scenario_json(s)}\n"


def _cmd_run(s: Scenario, fmt: str, out: Path | None) -> int:
    world, trace, end = run_scenario(s)
    problems = exclusivity_violations(world, trace) + beacon_overlaps(trace)
    stats = latency_from_trace(world, trace, end)
    problems += [f"node {n} frame {q} waited {lat} us" for n, q, lat in stats.violations]
    digest = trace_digest(trace)
    if fmt == "summary":
        counts: dict[str, int] = {}
        for e in trace:
            counts[e.category] = counts.get(e.category, 0) + 1
        lines = [_header(s).rstrip(), f"end_us {end}", f"events {len(trace)}"]
        lines += [f"category {k} {v}" for k, v in sorted(counts.items())]
        lines += [f"violations {len(problems)}", f"trace_sha256 {digest}"]
        _emit("\n".join(lines) + "\n", out, "run_summary.txt")
    else:
        body = "".join(ln + "\n" for ln in trace_lines(trace))
        _emit(_header(s) + body + f"# trace_sha256 {digest}\n", out, "run.trace")
    for msg in problems:
        print(f"violation: {msg}", file=sys.stderr)
    return 1 if problems else 0


def _cmd_schedule(s: Scenario, fmt: str, out: Path | None) -> int:
    table = build_table(s)
    violations = validate_schedule(table)
    if fmt == "summary":
        cfg = table.config
        lines = [f"horizon {cfg.horizon}", f"columns {cfg.columns}", f"allocations {len(table.allocations())}"]
        lines += [f"superframe {sf} cfp_us {table.t_cfp(sf)} cap_us {table.t_cap(sf)}" for sf in range(cfg.horizon)]
        lines.append(f"violations {len(violations)}")
        _emit("\n".join(lines) + "\n", out, "schedule_summary.txt")
    else:
        _emit(dump_schedule(table), out, "schedule.txt")
    for v in violations:
        print(f"violation: {v.rule} superframe={v.superframe} slot={v.slot} {v.detail}", file=sys.stderr)
    return 1 if violations else 0


def _sweep_summary(s: Scenario, result) -> str:
    lines = [_header(s).rstrip(), f"seed {s.seed}", f"discarded_trials {result.discarded}"]
    try:
        w = estimate_window(result)
        lines += [f"window_db {w.width_db:.3f}", f"crossover_db {w.crossover_db:.3f}"]
        for (tx, rx), (a, b) in w.edges.items():
            lines.append(f"curve {tx}->{rx} rate05_db {a:.3f} rate95_db {b:.3f}")
    except NonMonotone as exc:
        lines.append(f"window unavailable: {exc}")
    lines.append(f"result_sha256 {result.digest}")
    return "\n".join(lines) + "\n"


def _cmd_sweep(s: Scenario, fmt: str, out: Path | None, trials, step) -> int:
    result = run_sgts_sweep(s, trials=trials, step_db=step)
    if out is not None:
        _emit(sweep_table(result), out, "sweep.csv")
        _emit(_sweep_summary(s, result), out, "sweep_summary.txt")
    elif fmt == "summary":
        _emit(_sweep_summary(s, result), None, "")
    else:
        _emit(sweep_table(result), None, "")
    return 0


def _cmd_latency(s: Scenario, fmt: str, out: Path | None) -> int:
    world, trace, end = run_scenario(s)
    stats = latency_from_trace(world, trace, end)
    if fmt == "summary":
        lines = [_header(s).rstrip(), f"bi_us {latency_bound(s.superframe, 0) - s.superframe.slot_duration}"]
        for n in stats.nodes.values():
            bound = "none" if n.bound_us is None else str(n.bound_us)
            lines.append(f"node {n.node} frames {n.count} max_us {n.max_us} mean_us {n.mean_us:.1f} bound_us {bound}")
        lines.append(f"violations {len(stats.violations)}")
        _emit("\n".join(lines) + "\n", out, "latency_summary.txt")
    else:
        rows = ["node,frames,max_us,mean_us,bound_us"]
        for n in stats.nodes.values():
            rows.append(f"{n.node},{n.count},{n.max_us},{n.mean_us:.1f},{'' if n.bound_us is None else n.bound_us}")
        _emit("\n".join(rows) + "\n", out, "latency.csv")
    for node, seq, lat in stats.violations:
        print(f"violation: node {node} frame {seq} latency {lat} us", file=sys.stderr)
    return 1 if stats.violations else 0


_DEFAULT_FORMAT = {"run": "trace", "schedule": "table", "sweep": "table", "latency": "table"}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except _Usage as exc:
        print(exc, file=sys.stderr)
        return 2
    try:
        scenario = load_scenario(args.scenario)
    except FileNotFoundError:
        print(f"error: scenario not found: {args.scenario}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    fmt = args.format or _DEFAULT_FORMAT[args.command]
    try:
        if args.command == "run":
            return _cmd_run(scenario, fmt, args.out)
        if args.command == "schedule":
            return _cmd_schedule(scenario, fmt, args.out)
        if args.command == "sweep":
            return _cmd_sweep(scenario, fmt, args.out, args.trials, args.step)
        return _cmd_latency(scenario, fmt, args.out)
    except (BadTopology, ScheduleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
