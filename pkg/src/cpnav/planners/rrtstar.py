"""RRT* over the inflated-disk free space."""

from __future__ import annotations

import math
import time
from typing import Optional

import numpy as np

from ..world import Map, point_is_free, segments_clear
from .base import FREE_FLIGHT, NoPathError, Plan, PlanSegment, PlannerParams, RRTParams


class RRTStar:
    """Incremental RRT* tree; ``grow`` may be called repeatedly with the same RNG stream."""

    def __init__(self, start, goal, world: Map, inflation: float, params: RRTParams):
        self.world = world
        self.infl = inflation
        self.p = params
        self.goal = np.asarray(goal, dtype=float)[:2]
        cap = params.max_iters + 1
        self.nodes = np.zeros((cap, 2))
        self.cost = np.zeros(cap)
        self.parent = np.full(cap, -1, dtype=int)
        self.children: list[list[int]] = [[]]
        self.nodes[0] = np.asarray(start, dtype=float)[:2]
        self.n = 1
        self.iters = 0
        self.rng = np.random.default_rng(params.seed)
        xmin, ymin, xmax, ymax = world.bounds
        self.lo = np.array([xmin, ymin])
        self.hi = np.array([xmax, ymax])

    def _sample(self) -> np.ndarray:
        if self.rng.uniform() < self.p.goal_bias:
            return self.goal.copy()
        return self.rng.uniform(self.lo, self.hi)

    def _propagate(self, root: int, delta: float) -> None:
        stack = list(self.children[root])
        while stack:
            k = stack.pop()
            self.cost[k] -= delta
            stack.extend(self.children[k])

    def _reparent(self, k: int, new_parent: int) -> None:
        old = self.parent[k]
        if old >= 0:
            self.children[old].remove(k)
        self.parent[k] = new_parent
        self.children[new_parent].append(k)

    def step(self) -> None:
        self.iters += 1
        q = self._sample()
        pts = self.nodes[:self.n]
        d = np.linalg.norm(pts - q, axis=1)
        i_near = int(np.argmin(d))
        if d[i_near] < 1e-9:
            return
        step = min(self.p.step, d[i_near])
        new = pts[i_near] + (q - pts[i_near]) * (step / d[i_near])
        if not (np.all(new >= self.lo) and np.all(new <= self.hi)):
            return
        if not point_is_free(new, self.world, self.infl):
            return
        dn = np.linalg.norm(pts - new, axis=1)
        near = np.flatnonzero(dn <= self.p.rewire_radius)
        if i_near not in near:
            near = np.append(near, i_near)
        clear = segments_clear(pts[near], new, self.world, self.infl)
        if not clear.any():
            return
        cand = near[clear]
        via = self.cost[cand] + dn[cand]
        best = int(cand[int(np.argmin(via))])
        k = self.n
        self.nodes[k] = new
        self.cost[k] = float(np.min(via))
        self.parent[k] = best
        self.children.append([])
        self.children[best].append(k)
        self.n += 1
        # rewire neighbours through the new node when that is cheaper
        through = self.cost[k] + dn[cand]
        for j, c_new in zip(cand, through):
            if j == best or j == 0:
                continue
            if c_new < self.cost[j] - 1e-12:
                delta = self.cost[j] - c_new
                self._reparent(int(j), k)
                self.cost[j] = c_new
                self._propagate(int(j), delta)

    def grow(self, iters: int) -> None:
        for _ in range(iters):
            if self.n >= len(self.nodes):
                break
            self.step()

    def best_goal_parent(self) -> Optional[tuple[int, float]]:
        """Tree node that connects to the goal most cheaply, within one step."""
        pts = self.nodes[:self.n]
        dg = np.linalg.norm(pts - self.goal, axis=1)
        idx = np.flatnonzero(dg <= self.p.step)
        if len(idx) == 0:
            return None
        idx = idx[segments_clear(pts[idx], self.goal, self.world, self.infl)]
        if len(idx) == 0:
            return None
        total = self.cost[idx] + dg[idx]
        j = int(np.argmin(total))
        return int(idx[j]), float(total[j])

    def best_cost(self) -> float:
        b = self.best_goal_parent()
        return math.inf if b is None else b[1]

    def path(self) -> np.ndarray:
        b = self.best_goal_parent()
        if b is None:
            raise NoPathError(f"rrt*: no goal connection after {self.iters} iterations")
        k = b[0]
        pts = []
        while k >= 0:
            pts.append(self.nodes[k].copy())
            k = self.parent[k]
        pts.reverse()
        if np.linalg.norm(pts[-1] - self.goal) > 1e-9:
            pts.append(self.goal.copy())
        return np.array(pts)


def rrt_star_plan(start, goal, world: Map, params: PlannerParams = PlannerParams(),
                  seed: Optional[int] = None) -> Plan:
    t0 = time.perf_counter()
    rp = params.rrt if seed is None else RRTParams(params.rrt.max_iters, params.rrt.step,
                                                   params.rrt.goal_bias, params.rrt.rewire_radius, seed)
    tree = RRTStar(start, goal, world, params.l_max, rp)
    tree.grow(rp.max_iters)
    pts = tree.path()
    segs = [PlanSegment(FREE_FLIGHT, (float(p[0]), float(p[1])), params.baseline_speed) for p in pts[1:-1]]
    segs.append(PlanSegment(FREE_FLIGHT, (float(pts[-1][0]), float(pts[-1][1])), 0.0))
    elapsed = (time.perf_counter() - t0) * 1e3
    return Plan(segs, (float(start[0]), float(start[1])), "rrtstar", elapsed,
                {"iterations": tree.iters, "nodes": tree.n})
