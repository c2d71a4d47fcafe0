"""Command-line entry point.

Two subcommands:

* ``run`` simulates a builtin family or a scenario file and writes per-run
  trace files, a runs table, an aggregate table, and summary figures into the
  output directory.
* ``raster`` samples the total risk field of one scenario at a chosen
  planning cycle onto a grid file (optionally also a heat-map image).

Exit codes: 0 success, 1 scenario or argument error, 2 internal failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import List, Optional, Sequence

from . import report
from .scenarios import Scenario, ScenarioError, resolve_scenarios
from .simulation import SimConfig, field_snapshot, run_batch


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with code 1 (usage problems are user errors)."""

    def error(self, message: str):  # noqa: D102 - argparse hook
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _safe_name(scenario_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-._" else "_" for c in scenario_id)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="riskplan",
        description="Context-aware risk-field trajectory planning scenarios.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    run = sub.add_parser(
        "run",
        help="simulate a scenario family and write traces, tables and figures",
        description=(
            "Simulate all variations of a builtin family (builtin:a..d) or a "
            "scenario JSON file, writing per-run traces, a runs table, an "
            "aggregate table and figures into the output directory."
        ),
    )
    run.add_argument(
        "--scenario",
        required=True,
        help="builtin family id (builtin:a..d) or path to a scenario JSON file",
    )
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument(
        "--mode",
        choices=("perfect", "controller"),
        default="perfect",
        help="actuation mode: apply the planned input directly, or track the "
        "plan with P/PD controllers (default: perfect)",
    )
    run.add_argument(
        "--parallel",
        type=int,
        default=1,
        metavar="N",
        help="number of worker processes for batch runs (default: 1)",
    )
    run.add_argument(
        "--seed",
        type=int,
        default=None,
        metavar="N",
        help="seed recorded with every run (overrides the scenario's own)",
    )
    run.add_argument(
        "--trace-rules",
        action="store_true",
        help="write per-cycle rule conclusions next to each trace",
    )
    run.add_argument(
        "--solver-log",
        action="store_true",
        help="write per-cycle solver diagnostics next to each trace",
    )
    run.add_argument(
        "--dump-graph",
        action="store_true",
        help="write the final scene-graph dump next to each trace",
    )
    run.add_argument(
        "--raster",
        action="store_true",
        help="also rasterize the first planning cycle's risk field per scenario",
    )
    run.add_argument(
        "--no-figures",
        action="store_true",
        help="skip figure rendering (tables and traces only)",
    )

    raster = sub.add_parser(
        "raster",
        help="sample one scenario's risk field on a grid",
        description=(
            "Replay a scenario up to a planning cycle and write the total "
            "risk field sampled on a grid around the ego position."
        ),
    )
    raster.add_argument(
        "--scenario",
        required=True,
        help="builtin family id or scenario JSON file (first variation is used)",
    )
    raster.add_argument(
        "--step",
        type=int,
        default=0,
        metavar="K",
        help="planning cycle index to sample (default: 0, the first plan)",
    )
    raster.add_argument("--out", required=True, help="output CSV path")
    raster.add_argument(
        "--png",
        default=None,
        metavar="PATH",
        help="also render the grid as a heat-map image",
    )
    raster.add_argument(
        "--span",
        type=float,
        nargs=4,
        default=(-10.0, 60.0, -8.0, 8.0),
        metavar=("X0", "X1", "Y0", "Y1"),
        help="grid extents relative to the ego position (default: -10 60 -8 8)",
    )
    raster.add_argument(
        "--resolution",
        type=float,
        default=0.25,
        metavar="M",
        help="grid spacing in metres (default: 0.25)",
    )
    return parser


def _load(spec: str, seed: Optional[int]) -> List[Scenario]:
    scenarios = resolve_scenarios(spec)
    if seed is not None:
        scenarios = [replace(s, seed=seed) for s in scenarios]
    return scenarios


def _cmd_run(args: argparse.Namespace) -> int:
    if args.parallel < 1:
        print("riskplan: error: --parallel must be at least 1", file=sys.stderr)
        return 1
    scenarios = _load(args.scenario, args.seed)
    config = SimConfig(mode=args.mode, trace_rules=args.trace_rules)
    results = run_batch(scenarios, config, parallel=args.parallel)

    out = args.out
    os.makedirs(out, exist_ok=True)
    for scenario, result in zip(scenarios, results):
        name = _safe_name(result.scenario_id)
        report.write_trace_csv(result, os.path.join(out, "traces", f"{name}.csv"))
        if args.solver_log:
            report.write_solver_log(result, os.path.join(out, "solver", f"{name}.csv"))
        if args.trace_rules:
            report.write_rule_trace(result, os.path.join(out, "rules", f"{name}.txt"))
        if args.dump_graph:
            report.write_graph_dump(result, os.path.join(out, "graph", f"{name}.txt"))
        if args.raster:
            fieldset, state, _ = field_snapshot(scenario, config, cycle=0)
            xs, ys, values = report.raster_grid(
                fieldset,
                stage=1,
                x_range=(state.x - 10.0, state.x + 60.0),
                y_range=(state.y - 8.0, state.y + 8.0),
            )
            report.write_raster_csv(
                xs, ys, values, os.path.join(out, "raster", f"{name}.csv")
            )
    report.write_runs_csv(results, os.path.join(out, "runs.csv"))
    report.write_aggregate_csv(results, os.path.join(out, "aggregate.csv"))
    if not args.no_figures:
        report.render_trajectories(results, os.path.join(out, "trajectories.png"))
        report.render_metrics(results, os.path.join(out, "metrics.png"))

    goals = sum(1 for r in results if r.goal_reached)
    collisions = sum(r.collisions for r in results)
    deadlocks = sum(1 for r in results if r.deadlocked)
    print(
        f"{len(results)} runs: {goals} reached the goal, "
        f"{collisions} collisions, {deadlocks} deadlocks -> {out}"
    )
    return 0


def _cmd_raster(args: argparse.Namespace) -> int:
    if args.resolution <= 0:
        print("riskplan: error: --resolution must be positive", file=sys.stderr)
        return 1
    if args.step < 0:
        print("riskplan: error: --step must be non-negative", file=sys.stderr)
        return 1
    x0, x1, y0, y1 = args.span
    if x1 <= x0 or y1 <= y0:
        print("riskplan: error: --span extents must be increasing", file=sys.stderr)
        return 1
    scenario = _load(args.scenario, None)[0]
    fieldset, state, _ = field_snapshot(scenario, SimConfig(), cycle=args.step)
    xs, ys, values = report.raster_grid(
        fieldset,
        stage=1,
        x_range=(state.x + x0, state.x + x1),
        y_range=(state.y + y0, state.y + y1),
        resolution=args.resolution,
    )
    report.write_raster_csv(xs, ys, values, args.out)
    if args.png:
        report.render_raster(xs, ys, values, args.png)
    print(f"raster {values.shape[1]}x{values.shape[0]} -> {args.out}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "raster":
            return _cmd_raster(args)
        parser.error(f"unknown command {args.command!r}")
        return 1
    except ScenarioError as exc:
        print(f"riskplan: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"riskplan: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"riskplan: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal failure
        print(f"riskplan: internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
