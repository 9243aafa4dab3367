# reporting/summary.py
"""Plain-text run and benchmark summaries."""
from __future__ import annotations

from datetime import datetime, timezone
from typing import Any, Optional

import pandas as pd

from core.harness import RunMetrics
from core.trajectory import PickPlaceSolution

TITLE = "Pick-and-place planner"


# ------------------------- Public API ------------------------- #
def format_run(metrics: RunMetrics, solution: Optional[PickPlaceSolution] = None, limit: int | None = 20) -> str:
    """Summary of one detection: outcome, timings, attempts, trajectory phases, logs."""
    lines = [f"{TITLE} – {metrics.method}\n{_stamp()}\n"]
    outcome = "success" if metrics.success else f"failed ({metrics.reason or 'no reason given'})"
    head = [
        f"outcome: {outcome}",
        f"pick attempts: {metrics.pick_attempts}",
        f"place attempts: {metrics.place_attempts}",
    ]
    if metrics.bin_used:
        head.append(f"bin: {metrics.bin_used}")
    if metrics.success:
        head.append(f"placement error: {round_float(metrics.placement_error_m * 1000, 2)} mm / "
                    f"{round_float(metrics.placement_error_rad, 4)} rad")
    if metrics.audit_violations:
        head.append(f"audit violations (rejected trajectories): {metrics.audit_violations}")
    lines.append(_section("Result", head, limit=None))
    lines.append(_section("Timing [s]", [f"{k}: {round_float(v, 3)}" for k, v in metrics.times.items()], limit=None))
    if solution is not None and solution.trajectory is not None:
        phases = [f"{p.value}: samples {a}-{b}" for p, a, b in solution.trajectory.phase_table()]
        lines.append(_section(f"Trajectory ({len(solution.trajectory)} samples)", phases, limit=None))
    if metrics.logs:
        lines.append(_section("Logs", metrics.logs, limit=limit))
    return "\n".join(lines).strip()


def format_benchmark(aggregate: pd.DataFrame) -> str:
    lines = [f"{TITLE} – benchmark\n{_stamp()}\n"]
    if aggregate.empty:
        lines.append("No detections recorded.")
        return "\n".join(lines)
    for scenario, part in aggregate.groupby("scenario", sort=False):
        lines.append(_section(f"Scenario {scenario}", [_fmt_row(r) for r in part.to_dict("records")], limit=None))
    return "\n".join(lines).strip()


# ------------------------- Helpers ------------------------- #
def _stamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S UTC")


def _section(title: str, items: list[str], limit: int | None = 10) -> str:
    lines = [title]
    if not items:
        lines.append("None\n")
        return "\n".join(lines)
    for i, item in enumerate(items):
        if limit is not None and i >= limit:
            lines.append(f"... and {len(items) - limit} more")
            break
        lines.append(f"- {item}")
    lines.append("")
    return "\n".join(lines)


def _fmt_row(r: dict[str, Any]) -> str:
    bits = [
        f"[{r['method']}] success {round_float(100 * r['success_rate'], 1)}% of {r['detections']}",
        f"time {round_float(r['time_median'], 2)} s (IQR {round_float(r['time_iqr'], 2)})",
        f"pick {round_float(r['pick_attempts_mean'], 1)}",
        f"place {round_float(r['place_attempts_mean'], 1)}",
    ]
    if r.get("audit_violations"):
        bits.append(f"audit rejections {int(r['audit_violations'])}")
    return " · ".join(bits)


def round_float(x: Any, n: int = 2) -> Any:
    try:
        return round(float(x), n)
    except (TypeError, ValueError):
        return x
