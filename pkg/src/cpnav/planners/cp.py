"""Contact-prioritized planner.

Instead of steering around the first obstacle on the straight line to the
goal, the robot flies into it arm first, recovers behind the contact point,
and continues from a side waypoint placed diagonally past the obstacle.
"""

from __future__ import annotations

import logging
import math
import time

import numpy as np

from ..world import Map, first_intersection, point_is_free
from .astar import astar_plan
from .base import (COLLIDE, FREE_FLIGHT, RECOVER, InfeasibleError, NoPathError, Plan, PlanSegment,
                   PlannerParams)

log = logging.getLogger(__name__)


class _Counter:
    def __init__(self, world: Map):
        self.n = max(len(world.obstacles), 1)
        self.checks = 0

    def first(self, a, b, world, inflation, exclude=()):
        self.checks += self.n
        return first_intersection(a, b, world, inflation, exclude)


def side_waypoints(origin, center, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """The two points at ``sqrt(2) * radius`` from ``center`` on the normal to origin->center."""
    o = np.asarray(origin, dtype=float)[:2]
    c = np.asarray(center, dtype=float)[:2]
    u = (c - o) / np.linalg.norm(c - o)
    n = np.array([-u[1], u[0]])
    d = math.sqrt(2.0) * radius
    return c + d * n, c - d * n


def contact_geometry(origin, center, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Body position at first arm contact, and the approach direction."""
    o = np.asarray(origin, dtype=float)[:2]
    c = np.asarray(center, dtype=float)[:2]
    u = (c - o) / np.linalg.norm(c - o)
    return c - radius * u, u


def cp_plan(start, goal, world: Map, params: PlannerParams = PlannerParams()) -> Plan:
    t0 = time.perf_counter()
    start = np.asarray(start, dtype=float)[:2]
    goal = np.asarray(goal, dtype=float)[:2]
    infl = params.l_max
    if not point_is_free(goal, world, infl):
        raise InfeasibleError("goal lies inside an inflated obstacle")
    counter = _Counter(world)
    f_nom = params.nominal_f_max(params.collide_speed)
    cap = 4 * len(world.obstacles) + 4
    segs: list[PlanSegment] = []
    cur = start
    fallbacks = 0
    for _ in range(cap):
        hit = counter.first(cur, goal, world, infl)
        if hit is None:
            segs.append(PlanSegment(FREE_FLIGHT, (float(goal[0]), float(goal[1])), 0.0))
            break
        oid = hit[0]
        # the approach to the centre may itself be blocked by a nearer pole
        for _ in range(len(world.obstacles)):
            ob = world.obstacle(oid)
            if np.linalg.norm(np.asarray(ob.center) - cur) < 1e-9:
                break
            r_c, _ = contact_geometry(cur, ob.center, ob.radius + infl)
            blocker = counter.first(cur, r_c, world, infl, exclude=(oid,))
            if blocker is None or blocker[0] == oid:
                break
            oid = blocker[0]
        ob = world.obstacle(oid)
        R = ob.radius + infl
        r_c, u = contact_geometry(cur, ob.center, R)
        r_n = r_c - (params.eta * f_nom + params.d0) * u
        segs.append(PlanSegment(COLLIDE, (float(r_c[0]), float(r_c[1])), params.collide_speed, oid))
        segs.append(PlanSegment(RECOVER, (float(r_n[0]), float(r_n[1])), 0.0, oid))
        cands = sorted(side_waypoints(cur, ob.center, R), key=lambda p: float(np.linalg.norm(p - goal)))
        chosen = None
        for cand in cands:
            if not world.contains(cand) or not point_is_free(cand, world, infl):
                continue
            if counter.first(r_n, cand, world, infl) is not None:
                continue
            chosen = cand
            break
        if chosen is None:
            log.info("cp: both side waypoints of obstacle %d blocked, falling back to A*", oid)
            fallbacks += 1
            tail = astar_plan(r_n, goal, world, params)
            segs.extend(tail.segments)
            counter.checks += tail.counters.get("expansions", 0)
            break
        segs.append(PlanSegment(FREE_FLIGHT, (float(chosen[0]), float(chosen[1])), params.collide_speed))
        cur = chosen
    else:
        raise NoPathError(f"cp: iteration cap {cap} exceeded")
    elapsed = (time.perf_counter() - t0) * 1e3
    return Plan(segs, (float(start[0]), float(start[1])), "cp", elapsed,
                {"intersection_checks": counter.checks, "astar_fallbacks": fallbacks})
