"""File artifacts: trace CSVs, plan JSON, and SVG plots of maps and flown paths."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .planners.base import Plan
from .trajgen import PolynomialTrajectory
from .world import Map

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def downsample(trace: np.ndarray, rate: float) -> np.ndarray:
    """Rows of a time-ordered trace at roughly ``rate`` Hz (first and last rows kept)."""
    if len(trace) < 3 or rate <= 0:
        return trace
    t = trace[:, 0]
    dt = float(np.median(np.diff(t)))
    step = max(1, int(round(1.0 / (rate * dt))))
    idx = list(range(0, len(trace), step))
    if idx[-1] != len(trace) - 1:
        idx.append(len(trace) - 1)
    return trace[idx]


def write_trace_csv(path, trace: np.ndarray, columns: Sequence[str], rate: Optional[float] = 100.0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = downsample(trace, rate) if rate else trace
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format(float(v), ".9g") for v in row])
    return path


def read_trace_csv(path) -> tuple[tuple[str, ...], np.ndarray]:
    with Path(path).open() as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return tuple(header), data


REFERENCE_COLUMNS = ("t", "x", "y", "z", "yaw", "vx", "vy", "vz", "ax", "ay", "az")


def reference_grid(references: Sequence[tuple[float, PolynomialTrajectory]],
                   rate: float = 100.0) -> np.ndarray:
    """Commanded flat states on an absolute time grid.

    Each reference plays from its start time until the next one takes over
    (or until it ends); gaps between references are left out.
    """
    rows = []
    for k, (t0, traj) in enumerate(references):
        t1 = t0 + traj.total_time
        if k + 1 < len(references):
            t1 = min(t1, references[k + 1][0])
        n0 = int(math.ceil(t0 * rate - 1e-9))
        n1 = int(math.floor(t1 * rate + 1e-9))
        for n in range(n0, n1 + 1):
            if rows and n / rate <= rows[-1][0] + 1e-12:
                continue
            sp = traj.sample(n / rate - t0)
            rows.append([n / rate, *sp.r, sp.yaw, *sp.v, *sp.a])
    return np.array(rows) if rows else np.zeros((0, len(REFERENCE_COLUMNS)))


def write_plan_json(path, plan: Plan) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(plan.to_dict(), indent=2) + "\n")
    return path


def write_json(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


def svg_plot(world: Map, paths: Sequence[tuple[str, np.ndarray]] = (), plan: Optional[Plan] = None,
             inflation: float = 0.0, width: int = 640) -> str:
    """Top-down view: poles (solid), inflated poles (dashed), walls, paths and plan waypoints."""
    xmin, ymin, xmax, ymax = world.bounds
    scale = width / (xmax - xmin)
    height = int(math.ceil((ymax - ymin) * scale))

    def X(x):
        return (x - xmin) * scale

    def Y(y):
        return (ymax - y) * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white" stroke="black"/>']
    for o in world.obstacles:
        cx, cy = X(o.center[0]), Y(o.center[1])
        if inflation > 0:
            out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{(o.radius + inflation) * scale:.2f}" '
                       'fill="none" stroke="#999" stroke-dasharray="4 3"/>')
        out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{o.radius * scale:.2f}" fill="#555"/>')
    for wl in world.walls:
        out.append(f'<line x1="{X(wl.start[0]):.2f}" y1="{Y(wl.start[1]):.2f}" x2="{X(wl.end[0]):.2f}" '
                   f'y2="{Y(wl.end[1]):.2f}" stroke="black" stroke-width="3"/>')
    if plan is not None:
        wp = plan.waypoints
        pts = " ".join(f"{X(p[0]):.2f},{Y(p[1]):.2f}" for p in wp)
        out.append(f'<polyline points="{pts}" fill="none" stroke="#aaa" stroke-width="1"/>')
        for p in wp:
            out.append(f'<circle cx="{X(p[0]):.2f}" cy="{Y(p[1]):.2f}" r="3" fill="#aaa"/>')
    for k, (label, xy) in enumerate(paths):
        color = PALETTE[k % len(PALETTE)]
        xy = np.asarray(xy)
        if len(xy) > 2000:
            xy = xy[:: int(math.ceil(len(xy) / 2000))]
        pts = " ".join(f"{X(p[0]):.2f},{Y(p[1]):.2f}" for p in xy)
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="8" y="{18 + 16 * k}" font-size="13" fill="{color}">{escape(label)}</text>')
    for p, name in ((world.start, "start"), (world.goal, "goal")):
        out.append(f'<circle cx="{X(p[0]):.2f}" cy="{Y(p[1]):.2f}" r="5" fill="none" stroke="black"/>')
        out.append(f'<text x="{X(p[0]) + 7:.2f}" y="{Y(p[1]) - 7:.2f}" font-size="12">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, svg: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
    return path


__all__ = ["REFERENCE_COLUMNS", "reference_grid", "downsample", "write_trace_csv", "read_trace_csv",
           "write_plan_json", "write_json", "svg_plot", "write_svg"]
