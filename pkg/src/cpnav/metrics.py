"""Per-trial metric records, their computation from executed traces, and aggregation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .planners.base import COLLIDE, RECOVER, Plan
from .world import Map, min_clearance

# wall-clock fields; kept out of the deterministic metrics file
TIMING_FIELDS = ("plan_time", "traj_gen_time")
COUNTER_NAMES = ("expansions", "los_checks", "intersection_checks", "iterations", "nodes")
KEY_FIELDS = ("scenario", "label", "seed")


@dataclass
class MetricsRecord:
    scenario: str
    label: str
    seed: int
    variant: str = ""
    success: bool = False
    plan_time: float = math.nan  # ms
    traj_gen_time: float = math.nan  # s
    traj_time: float = math.nan
    path_length: float = math.nan
    waypoint_length: float = math.nan
    clearance: float = math.nan
    peak_accel: float = math.nan
    f_hat_max: float = math.nan
    settle_time: float = math.nan
    rebound_speed: float = math.nan
    max_tilt: float = math.nan  # deg
    height: float = math.nan
    speed: float = math.nan
    force_true: float = math.nan
    force_est: float = math.nan
    n_contacts: int = 0
    n_unplanned: int = 0
    n_touched: int = 0
    n_replans: int = 0
    expansions: int = 0
    los_checks: int = 0
    intersection_checks: int = 0
    iterations: int = 0
    nodes: int = 0
    error: str = ""

    def as_row(self, exclude: Sequence[str] = ()) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in exclude}


FIELD_NAMES = tuple(f.name for f in fields(MetricsRecord))
NUMERIC_FIELDS = tuple(f.name for f in fields(MetricsRecord)
                       if f.type in ("float", "int") and f.name != "seed")


def arc_length(points: np.ndarray) -> float:
    P = np.asarray(points, dtype=float)
    if len(P) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(P, axis=0), axis=1)))


def executed_waypoint_length(plan: Plan, contacts) -> float:
    """Waypoint-chain length with each planned contact and recovery point taken as flown."""
    planned = [c for c in contacts if c.planned]
    pts = [np.asarray(plan.start, dtype=float)]
    k = 0
    for seg in plan.segments:
        if seg.kind == COLLIDE and k < len(planned):
            pts.append(planned[k].r_c[:2])
        elif seg.kind == RECOVER and k < len(planned):
            pts.append(planned[k].r_n[:2])
            k += 1
        else:
            pts.append(np.asarray(seg.target, dtype=float))
    return arc_length(np.array(pts))


def max_tilt_deg(quats: np.ndarray) -> float:
    """Largest angle between body z and world z over quaternion rows (w, x, y, z)."""
    q = np.atleast_2d(quats)
    cos_tilt = np.clip(1.0 - 2.0 * (q[:, 1] ** 2 + q[:, 2] ** 2), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos_tilt)).max())


def settle_time(t: np.ndarray, positions: np.ndarray, target, t_from: float, t_to: float,
                tol: float) -> float:
    """Time after ``t_from`` until the position stays within ``tol`` of ``target`` up to ``t_to``.

    ``inf`` when the position is still outside the ball at ``t_to``.
    """
    sel = (t >= t_from - 1e-12) & (t <= t_to + 1e-12)
    if not np.any(sel):
        return math.inf
    ts = t[sel]
    d = np.linalg.norm(positions[sel] - np.asarray(target, dtype=float), axis=1)
    outside = np.flatnonzero(d > tol)
    if len(outside) == 0:
        return 0.0
    if outside[-1] == len(ts) - 1:
        return math.inf
    return float(ts[outside[-1] + 1] - t_from)


def compute_metrics(plans: Sequence[Plan], result, world: Map, inflation: float,
                    record: MetricsRecord, cp: bool, n_replans: int = 0) -> MetricsRecord:
    """Fill the planning fields of ``record`` from the plans and the executed trace.

    Obstacles a CP robot touched on purpose (or ran into and recovered from)
    do not count toward clearance; for a baseline any touch is a failure.
    """
    if len(result.trace) == 0:
        raise ValueError("executed trace is empty")
    P = result.positions
    record.plan_time = float(sum(p.plan_wall_time for p in plans))
    record.traj_gen_time = float(result.traj_gen_time)
    record.traj_time = float(result.traj_time)
    record.path_length = arc_length(P)
    if len(plans) == 1:
        record.waypoint_length = executed_waypoint_length(plans[0], result.contacts)
    excluded = set()
    if cp:
        for p in plans:
            excluded.update(p.contacted)
        excluded.update(c.obstacle_id for c in result.contacts if c.obstacle_id is not None)
    record.clearance = min_clearance(P, world, inflation, excluded)
    record.n_contacts = len(result.contacts)
    record.n_unplanned = sum(1 for c in result.contacts if not c.planned)
    record.n_touched = len(result.touched)
    record.n_replans = n_replans
    if result.contacts:
        record.f_hat_max = max(c.f_hat_max for c in result.contacts)
    for name in COUNTER_NAMES:
        setattr(record, name, int(sum(int(p.counters.get(name, 0)) for p in plans)))
    error = result.error
    if not error and not cp and result.touched:
        error = f"touched obstacle {result.touched[0]}"
    record.error = record.error or error
    record.success = bool(result.reached) and not record.error
    return record


def aggregate(records: Iterable[MetricsRecord], by: Sequence[str] = ("scenario", "label"),
              metrics: Optional[Sequence[str]] = None) -> dict:
    """Mean and sample standard deviation of every finite metric, per group.

    Groups are keyed ``"a/b"`` over the ``by`` fields and sorted, so the
    result does not depend on record order.
    """
    metrics = tuple(metrics or NUMERIC_FIELDS)
    groups: dict[str, list[MetricsRecord]] = {}
    for r in records:
        groups.setdefault("/".join(str(getattr(r, k)) for k in by), []).append(r)
    out = {}
    for key in sorted(groups):
        rs = sorted(groups[key], key=lambda r: (r.seed, r.label))
        entry = {"n": len(rs), "success_rate": float(np.mean([r.success for r in rs]))}
        for m in metrics:
            vals = np.array([float(getattr(r, m)) for r in rs])
            vals = vals[np.isfinite(vals)]
            if len(vals) == 0:
                continue
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            entry[m] = {"mean": float(np.mean(vals)), "std": std, "n": int(len(vals))}
        out[key] = entry
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".10g")
    return str(v)


def records_to_csv(records: Sequence[MetricsRecord], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in records:
        row = asdict(r)
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def metrics_csv(records: Sequence[MetricsRecord]) -> str:
    """Deterministic per-trial table (wall-clock fields excluded)."""
    return records_to_csv(records, [c for c in FIELD_NAMES if c not in TIMING_FIELDS])


def timings_csv(records: Sequence[MetricsRecord]) -> str:
    return records_to_csv(records, list(KEY_FIELDS) + list(TIMING_FIELDS))


def format_table(summary: dict, metrics: Sequence[str]) -> str:
    """Plain-text ``mean ± std`` table, one row per group."""
    head = ["group", "n", "success"] + list(metrics)
    rows = [head]
    for key, entry in summary.items():
        row = [key, str(entry["n"]), f"{entry['success_rate']:.2f}"]
        for m in metrics:
            s = entry.get(m)
            row.append("-" if s is None else f"{s['mean']:.4g} ± {s['std']:.2g}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(wd) for c, wd in zip(r, widths)) for r in rows)


__all__ = ["MetricsRecord", "TIMING_FIELDS", "FIELD_NAMES", "NUMERIC_FIELDS", "arc_length",
           "executed_waypoint_length", "max_tilt_deg", "settle_time", "compute_metrics", "aggregate",
           "metrics_csv", "timings_csv", "format_table"]
