"""Receding-horizon replanning over a map that is discovered while flying."""

from __future__ import annotations

import logging
import math
from typing import Callable

import numpy as np

from ..world import KnownMap, Map, visible_obstacles
from .base import COLLIDE, FREE_FLIGHT, RECOVER, Plan, PlanningError, PlanSegment

log = logging.getLogger(__name__)

PlannerFn = Callable[[np.ndarray, np.ndarray, KnownMap], Plan]


class StallError(PlanningError):
    """No progress toward the goal over several replanning intervals."""


def committed_prefix(ex) -> list[PlanSegment]:
    """Targets the robot is committed to before a new plan may take over.

    A CP robot that is heading into a planned contact, or flying to the side
    waypoint right after one, keeps those targets; replanning from the side of
    the pole it just hit would only send it back into the same pole.
    """
    if ex.plan_kind != "cp":
        return []
    t = ex.state.t
    leg = ex.leg
    if leg is not None and leg.collide is not None:
        out = leg.remaining(t) or [leg.collide]
        pend = list(ex.pending)
        if pend and pend[0].kind == RECOVER:
            out.append(pend.pop(0))
            if pend and pend[0].kind == FREE_FLIGHT:
                out.append(pend[0])
        return out
    if leg is not None and leg.after_recovery:
        rem = leg.remaining(t)
        if rem and rem[0] is leg.targets[0]:
            return [rem[0]]
        return []
    if leg is None and ex.last_contact_planned and ex.pending and ex.pending[0].kind == FREE_FLIGHT:
        return [ex.pending[0]]
    return []


class OnlineSession:
    """Keeps the known map and drives replanning on an :class:`~cpnav.executor.Executor`."""

    def __init__(self, ex, planner: PlannerFn, world: Map, sensing_range: float, interval: float,
                 stall_intervals: int = 3, progress_eps: float = 0.1):
        if not interval > 0:
            raise ValueError("interval must be positive")
        self.ex = ex
        self.planner = planner
        self.world = world
        self.range = sensing_range
        self.interval = interval
        self.stall_intervals = stall_intervals
        self.progress_eps = progress_eps
        self.known = KnownMap.empty_like(world)
        self.known_ids: tuple[int, ...] = ()
        self.n_replans = 0
        self.plan_times: list[float] = []
        self.goal = np.asarray(world.goal, dtype=float)
        self._best = math.inf
        self._stalled = 0

    def _sense(self) -> bool:
        self.known = visible_obstacles(self.ex.state.r[:2], self.range, self.world, self.known)
        ids = tuple(o.id for o in self.known.obstacles)
        changed = ids != self.known_ids
        self.known_ids = ids
        return changed

    def _plan_from(self, start) -> Plan:
        plan = self.planner(np.asarray(start, dtype=float), self.goal, self.known)
        self.plan_times.append(plan.plan_wall_time)
        return plan

    def initial_plan(self) -> Plan:
        self._sense()
        return self._plan_from(self.ex.state.r[:2])

    def replan(self, force: bool = False) -> Plan | None:
        if not (self._sense() or force):
            return None
        prefix = committed_prefix(self.ex)
        start = prefix[-1].target if prefix else self.ex.state.r[:2]
        try:
            tail = self._plan_from(start)
        except PlanningError as exc:
            log.info("online: replanning failed (%s); keeping the current plan", exc)
            return None
        self.n_replans += 1
        return Plan(prefix + list(tail.segments), tuple(float(c) for c in self.ex.state.r[:2]),
                    tail.planner_id, tail.plan_wall_time, dict(tail.counters))

    def apply(self, plan: Plan) -> None:
        ex = self.ex
        leg = ex.leg
        if leg is not None and leg.collide is not None:
            # the contact leg stays in flight; only what follows it changes
            n_keep = len(leg.remaining(ex.state.t) or [leg.collide])
            ex.splice(plan.segments[n_keep:], plan)
        else:
            ex.set_plan(plan)

    def check_progress(self) -> None:
        d = float(np.linalg.norm(self.ex.state.r[:2] - self.goal))
        if d < self._best - self.progress_eps:
            self._best = d
            self._stalled = 0
            return
        self._stalled += 1
        if self._stalled >= self.stall_intervals:
            raise StallError(f"no progress toward the goal over {self._stalled} intervals "
                             f"(distance {d:.2f} m)")


def online_replan(ex, planner: PlannerFn, world: Map, sensing_range: float, interval: float,
                  stall_intervals: int = 3):
    """Fly ``ex`` to the goal, replanning every ``interval`` seconds on what it has seen.

    Returns the execution result and the session (replan count, planning times).
    A stall raises :class:`StallError`.
    """
    from ..executor import DONE, TRACK

    session = OnlineSession(ex, planner, world, sensing_range, interval, stall_intervals)
    ex.set_plan(session.initial_plan())
    ex.replanner = lambda e: session.replan()
    next_check = ex.state.t + interval
    while ex.mode != DONE and ex.state.t < ex.sim.max_time - 1e-12 and ex.crashed is None:
        ex.step()
        if ex.state.t + 1e-12 >= next_check:
            next_check += interval
            session.check_progress()
            if ex.mode == TRACK:
                plan = session.replan()
                if plan is not None:
                    session.apply(plan)
    return ex.result(ex.status()), session
