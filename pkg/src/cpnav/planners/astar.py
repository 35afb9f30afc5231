"""8-connected grid A* with line-of-sight shortcutting."""

from __future__ import annotations

import heapq
import math
import time

import numpy as np

from ..world import Map, segment_is_clear
from .base import FREE_FLIGHT, NoPathError, Plan, PlanSegment, PlannerParams

SQRT2 = math.sqrt(2.0)
NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


class Grid:
    """Lattice of nodes ``origin + (i, j) * resolution`` covering the map bounds."""

    def __init__(self, world: Map, resolution: float, inflation: float):
        xmin, ymin, xmax, ymax = world.bounds
        self.res = resolution
        self.origin = np.array([xmin, ymin])
        self.nx = int(math.floor((xmax - xmin) / resolution + 1e-9)) + 1
        self.ny = int(math.floor((ymax - ymin) / resolution + 1e-9)) + 1
        xs = xmin + resolution * np.arange(self.nx)
        ys = ymin + resolution * np.arange(self.ny)
        free = np.ones((self.nx, self.ny), dtype=bool)
        for c, r in zip(world.centers, world.radii):
            d2 = (xs[:, None] - c[0]) ** 2 + (ys[None, :] - c[1]) ** 2
            free &= d2 >= (r + inflation) ** 2
        self.free = free

    def point(self, ij) -> np.ndarray:
        return self.origin + self.res * np.asarray(ij, dtype=float)

    def nearest_free(self, p) -> tuple[int, int]:
        """Closest free node to ``p`` (breadth over growing rings)."""
        i0 = int(round((p[0] - self.origin[0]) / self.res))
        j0 = int(round((p[1] - self.origin[1]) / self.res))
        i0 = min(max(i0, 0), self.nx - 1)
        j0 = min(max(j0, 0), self.ny - 1)
        if self.free[i0, j0]:
            return i0, j0
        idx = np.argwhere(self.free)
        if len(idx) == 0:
            raise NoPathError("no free cell in the map")
        pts = self.origin + self.res * idx
        k = int(np.argmin(np.linalg.norm(pts - np.asarray(p[:2]), axis=1)))
        return int(idx[k, 0]), int(idx[k, 1])


def grid_search(grid: Grid, start: tuple[int, int], goal: tuple[int, int]) -> tuple[list[tuple[int, int]], int]:
    """A* over free nodes; returns the node path and the expansion count."""
    gx, gy = goal
    res = grid.res
    g = {start: 0.0}
    parent = {start: None}
    heap = [(res * math.hypot(start[0] - gx, start[1] - gy), 0.0, start)]
    closed = set()
    expansions = 0
    free = grid.free
    while heap:
        _, gc, node = heapq.heappop(heap)
        if node in closed:
            continue
        closed.add(node)
        expansions += 1
        if node == goal:
            path = []
            while node is not None:
                path.append(node)
                node = parent[node]
            return path[::-1], expansions
        i, j = node
        for di, dj in NEIGHBOURS:
            ni, nj = i + di, j + dj
            if ni < 0 or nj < 0 or ni >= grid.nx or nj >= grid.ny or not free[ni, nj]:
                continue
            nb = (ni, nj)
            if nb in closed:
                continue
            cost = gc + (SQRT2 * res if di and dj else res)
            if cost < g.get(nb, math.inf):
                g[nb] = cost
                parent[nb] = node
                heapq.heappush(heap, (cost + res * math.hypot(ni - gx, nj - gy), cost, nb))
    raise NoPathError(f"goal unreachable after {expansions} expansions")


def shortcut(points: np.ndarray, world: Map, inflation: float) -> tuple[np.ndarray, int]:
    """Greedy line-of-sight pruning: from each anchor jump to the farthest visible point."""
    out = [points[0]]
    checks = 0
    i = 0
    n = len(points)
    while i < n - 1:
        j = n - 1
        while j > i + 1:
            checks += 1
            if segment_is_clear(points[i], points[j], world, inflation):
                break
            j -= 1
        out.append(points[j])
        i = j
    return np.array(out), checks


def astar_plan(start, goal, world: Map, params: PlannerParams = PlannerParams(),
               resolution: float | None = None) -> Plan:
    """Grid A* from ``start`` to ``goal`` around obstacles inflated by ``l_max``."""
    t0 = time.perf_counter()
    res = params.grid_resolution if resolution is None else resolution
    grid = Grid(world, res, params.l_max)
    s = grid.nearest_free(start)
    gl = grid.nearest_free(goal)
    nodes, expansions = grid_search(grid, s, gl)
    pts = np.array([grid.point(n) for n in nodes])
    pts = np.vstack((np.asarray(start, dtype=float)[:2], pts, np.asarray(goal, dtype=float)[:2]))
    # drop lattice points that coincide with the exact endpoints
    keep = [0] + [k for k in range(1, len(pts) - 1)
                  if np.linalg.norm(pts[k] - pts[0]) > 1e-9 and np.linalg.norm(pts[k] - pts[-1]) > 1e-9]
    pts = np.vstack((pts[keep], pts[-1:]))
    pruned, checks = shortcut(pts, world, params.l_max)
    segs = [PlanSegment(FREE_FLIGHT, (float(p[0]), float(p[1])), params.baseline_speed) for p in pruned[1:-1]]
    segs.append(PlanSegment(FREE_FLIGHT, (float(pruned[-1][0]), float(pruned[-1][1])), 0.0))
    elapsed = (time.perf_counter() - t0) * 1e3
    return Plan(segs, (float(start[0]), float(start[1])), "astar", elapsed,
                {"expansions": expansions, "los_checks": checks})
