"""Delimited-text reports and figures for runs and batches.

All writers format floats through one fixed rule so identical inputs yield
byte-identical files; figure rendering uses the Agg backend and never needs a
display.
"""

from __future__ import annotations

import math
import os
from statistics import median
from typing import List, Sequence, Tuple

import numpy as np

from .fields import RiskFieldSet
from .simulation import SimResult

TRACE_HEADER = (
    "t,x,y,theta,v,delta,a,omega,lat_acc,min_clearance"
)
RUNS_HEADER = (
    "scenario_id,goal_reached,completion_time,collisions,collided_with,"
    "min_clearance,standstill_distance,max_acceleration,min_acceleration,"
    "max_abs_lat_acc,braking_median,lane_departure_steps,deadlocked,"
    "infeasible_cycles,solver_max_residual,solver_max_violation,"
    "solver_max_descent_gap,solver_max_iterations,cycles,steps,sim_time"
)
SOLVER_HEADER = (
    "cycle,t,status,iterations,cost,warm_cost,bound_violation,dynamics_residual"
)


def _fmt(value: float) -> str:
    """Stable scalar formatting: short, locale-free, deterministic."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return ""
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.9g}"


def _write_lines(path: str, lines: Sequence[str]) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for line in lines:
            handle.write(line)
            handle.write("\n")


def write_trace_csv(result: SimResult, path: str) -> None:
    """Per-plant-step time series of one run."""
    lines = [TRACE_HEADER]
    trace = result.trace
    if trace is not None:
        for i in range(trace.t.shape[0]):
            lines.append(
                ",".join(
                    _fmt(column[i])
                    for column in (
                        trace.t,
                        trace.x,
                        trace.y,
                        trace.theta,
                        trace.v,
                        trace.delta,
                        trace.a_cmd,
                        trace.omega_cmd,
                        trace.lat_acc,
                        trace.min_clearance,
                    )
                )
            )
    _write_lines(path, lines)


def write_solver_log(result: SimResult, path: str) -> None:
    """Per-cycle solver diagnostics of one run."""
    lines = [SOLVER_HEADER]
    for audit in result.audits:
        lines.append(
            ",".join(
                (
                    str(audit.cycle),
                    _fmt(audit.t),
                    audit.status,
                    str(audit.iterations),
                    _fmt(audit.cost),
                    _fmt(audit.warm_cost),
                    _fmt(audit.bound_violation),
                    _fmt(audit.dynamics_residual),
                )
            )
        )
    _write_lines(path, lines)


def write_rule_trace(result: SimResult, path: str) -> None:
    _write_lines(path, result.rule_trace if result.rule_trace else ["(no trace)"])


def write_graph_dump(result: SimResult, path: str) -> None:
    _write_lines(path, result.graph_dump.splitlines())


def runs_row(result: SimResult) -> str:
    return ",".join(
        (
            result.scenario_id,
            "1" if result.goal_reached else "0",
            _fmt(result.completion_time),
            str(result.collisions),
            result.collided_with or "",
            _fmt(result.min_clearance),
            _fmt(result.standstill_distance),
            _fmt(result.max_acceleration),
            _fmt(result.min_acceleration),
            _fmt(result.max_abs_lat_acc),
            _fmt(result.braking_median),
            str(result.lane_departure_steps),
            "1" if result.deadlocked else "0",
            str(result.infeasible_cycles),
            _fmt(result.solver_max_residual),
            _fmt(result.solver_max_violation),
            _fmt(result.solver_max_descent_gap),
            str(result.solver_max_iterations),
            str(result.cycles),
            str(result.steps),
            _fmt(result.sim_time),
        )
    )


def write_runs_csv(results: Sequence[SimResult], path: str) -> None:
    """One row per run, in batch order."""
    _write_lines(path, [RUNS_HEADER] + [runs_row(r) for r in results])


def _stats(values: List[float]) -> Tuple[str, str, str, str]:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return ("0", "", "", "")
    return (
        str(len(finite)),
        _fmt(min(finite)),
        _fmt(max(finite)),
        _fmt(median(finite)),
    )


def aggregate_lines(results: Sequence[SimResult]) -> List[str]:
    """Min/max/median per metric plus batch counts."""
    lines = ["metric,count,min,max,median"]
    metrics = (
        ("completion_time", [r.completion_time for r in results if r.goal_reached]),
        ("min_clearance", [r.min_clearance for r in results]),
        ("standstill_distance", [r.standstill_distance for r in results]),
        ("max_acceleration", [r.max_acceleration for r in results]),
        ("min_acceleration", [r.min_acceleration for r in results]),
        ("max_abs_lat_acc", [r.max_abs_lat_acc for r in results]),
        ("braking_median", [r.braking_median for r in results]),
        ("solver_max_residual", [r.solver_max_residual for r in results]),
        ("solver_max_violation", [r.solver_max_violation for r in results]),
        ("solver_max_descent_gap", [r.solver_max_descent_gap for r in results]),
    )
    for name, values in metrics:
        count, lo, hi, mid = _stats(list(values))
        lines.append(f"{name},{count},{lo},{hi},{mid}")
    lines.append(f"runs,{len(results)},,,")
    lines.append(f"goals_reached,{sum(1 for r in results if r.goal_reached)},,,")
    lines.append(f"collisions,{sum(r.collisions for r in results)},,,")
    lines.append(f"deadlocks,{sum(1 for r in results if r.deadlocked)},,,")
    lines.append(
        f"lane_departure_runs,{sum(1 for r in results if r.lane_departure_steps)},,,"
    )
    lines.append(
        f"infeasible_cycles,{sum(r.infeasible_cycles for r in results)},,,"
    )
    return lines


def write_aggregate_csv(results: Sequence[SimResult], path: str) -> None:
    _write_lines(path, aggregate_lines(results))


# ---------------------------------------------------------------------------
# field rasters


def raster_grid(
    fieldset: RiskFieldSet,
    stage: int,
    x_range: Tuple[float, float],
    y_range: Tuple[float, float],
    resolution: float = 0.25,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample the total field of one stage on a regular grid.

    Returns (xs, ys, values) with values indexed [iy, ix].
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    xs = np.arange(x_range[0], x_range[1] + 0.5 * resolution, resolution)
    ys = np.arange(y_range[0], y_range[1] + 0.5 * resolution, resolution)
    values = np.empty((ys.shape[0], xs.shape[0]))
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            values[iy, ix] = fieldset.total(stage, float(x), float(y))
    return xs, ys, values


def write_raster_csv(
    xs: np.ndarray, ys: np.ndarray, values: np.ndarray, path: str
) -> None:
    """Matrix layout: first row x coordinates, first column y coordinates."""
    lines = ["y\\x," + ",".join(_fmt(x) for x in xs)]
    for iy, y in enumerate(ys):
        lines.append(_fmt(y) + "," + ",".join(_fmt(v) for v in values[iy]))
    _write_lines(path, lines)


# ---------------------------------------------------------------------------
# figures


def _ensure_dir(path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def render_trajectories(results: Sequence[SimResult], path: str) -> None:
    """Driven (x, y) paths of every run that recorded a trace."""
    plt = _pyplot()
    _ensure_dir(path)
    fig, ax = plt.subplots(figsize=(10, 4))
    for result in results:
        if result.trace is None:
            continue
        ax.plot(result.trace.x, result.trace.y, linewidth=0.8, alpha=0.6)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"driven trajectories ({len(results)} runs)")
    ax.grid(True, linewidth=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_metrics(results: Sequence[SimResult], path: str) -> None:
    """Histogram panel of the headline batch metrics."""
    plt = _pyplot()
    _ensure_dir(path)
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    panels = (
        (
            "completion time [s]",
            [r.completion_time for r in results if r.goal_reached],
        ),
        ("min clearance [m]", [r.min_clearance for r in results]),
        ("max |lat acc| [m/s^2]", [r.max_abs_lat_acc for r in results]),
        (
            "braking median [m/s^2]",
            [r.braking_median for r in results if math.isfinite(r.braking_median)],
        ),
    )
    for ax, (label, values) in zip(axes.flat, panels):
        finite = [v for v in values if math.isfinite(v)]
        if finite:
            ax.hist(finite, bins=min(20, max(5, len(finite) // 4)))
        ax.set_xlabel(label)
        ax.set_ylabel("runs")
        ax.grid(True, linewidth=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_raster(
    xs: np.ndarray, ys: np.ndarray, values: np.ndarray, path: str
) -> None:
    """Heat map of a sampled risk field."""
    plt = _pyplot()
    _ensure_dir(path)
    fig, ax = plt.subplots(figsize=(10, 4))
    mesh = ax.pcolormesh(xs, ys, values, shading="auto")
    fig.colorbar(mesh, ax=ax, label="risk")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("total risk field")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


__all__ = [
    "aggregate_lines",
    "raster_grid",
    "render_metrics",
    "render_raster",
    "render_trajectories",
    "runs_row",
    "write_aggregate_csv",
    "write_graph_dump",
    "write_raster_csv",
    "write_rule_trace",
    "write_runs_csv",
    "write_solver_log",
    "write_trace_csv",
]
