"""Closed-loop execution of plans: trajectory legs, contact handling, recovery.

The executor turns a :class:`~cpnav.planners.base.Plan` into min-snap legs,
tracks them with the cascaded controller on the simulated vehicle, runs the
arm-length estimator, and reacts to collisions:

``TRACK`` -> (collision detected) -> ``CONTACT_HOLD`` -> (force released)
-> ``RECOVER`` -> ``TRACK`` ... -> ``DONE``

The rigid robot skips the hold: its accelerometer rule starts the recovery
immediately.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .control import FlatSetpoint, Gains, TrackingController
from .planners.base import COLLIDE, FREE_FLIGHT, RECOVER, Plan, PlannerParams, PlanSegment
from .sensing import COLLISION_DETECTED, HANDLING_START, ArmSensorPipeline, SensorModel, detect_rigid
from .so3 import quat_from_rotmat
from .trajgen import (BoundaryCondition, PolynomialTrajectory, RecoveryParams, concatenate, min_snap,
                      recovery_setpoint, recovery_trajectory, segment_time, straight_run, unwrap_yaw)
from .vehicle import COMPLIANT, RIGID, RobotParams, RobotState, step_dynamics
from .world import Map

TRACK = "track"
CONTACT_HOLD = "contact_hold"
RECOVER_MODE = "recover"
DONE = "done"
MODE_CODES = {TRACK: 0, CONTACT_HOLD: 1, RECOVER_MODE: 2, DONE: 3}
BASELINES = ("astar", "rrtstar")
MIN_SEGMENT = 0.05


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    max_time: float = 150.0
    feedback_rate: float = 100.0
    feedback_delay: float = 0.0
    goal_tol_pos: float = 0.1
    goal_tol_vel: float = 0.1
    f_threshold: float = 25.0
    recovery_time: float = 2.5
    rigid_f_max: float = 80.0
    contact_timeout: float = 1.0
    body_radius: float = 0.0
    push_through: float = 0.3  # how far past the contact point a collide setpoint may run
    recovery: RecoveryParams = field(default_factory=RecoveryParams)

    def __post_init__(self):
        if not 0 < self.dt <= 0.005:
            raise ValueError("sim.dt must lie in (0, 0.005]")
        if not self.feedback_rate > 0:
            raise ValueError("sim.feedback_rate must be positive")
        if self.feedback_delay < 0:
            raise ValueError("sim.feedback_delay must be non-negative")
        if self.push_through < 0:
            raise ValueError("sim.push_through must be non-negative")
        if self.body_radius < 0:
            raise ValueError("sim.body_radius must be non-negative")


@dataclass
class ContactEvent:
    t_detect: float
    t_handling: float
    f_hat_max: float
    r_c: np.ndarray
    r_n: np.ndarray
    obstacle_id: Optional[int]
    planned: bool


@dataclass
class ExecutionResult:
    trace: np.ndarray
    columns: tuple[str, ...]
    reached: bool
    traj_time: float
    contacts: list[ContactEvent]
    touched: list[int]
    plans: list[Plan]
    traj_gen_time: float
    n_legs: int
    error: str = ""
    references: list[tuple[float, PolynomialTrajectory]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return self.trace[:, self.columns.index(name)]

    @property
    def positions(self) -> np.ndarray:
        return self.trace[:, 1:4]


TRACE_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "l", "f_e_true",
                 "f_e_hat", "mode")


def yaw_of(R: np.ndarray) -> float:
    return math.atan2(R[1, 0], R[0, 0])


def resample_polyline(points: np.ndarray, spacing: float) -> np.ndarray:
    """Insert evenly spaced points so no piece is longer than ``spacing``."""
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        L = float(np.linalg.norm(b - a))
        k = max(1, int(math.ceil(L / spacing - 1e-9)))
        for j in range(1, k + 1):
            out.append(a + (b - a) * (j / k))
    return np.array(out)


def _dedupe(points: list[np.ndarray], keep_last: bool = True) -> list[np.ndarray]:
    out = [points[0]]
    for p in points[1:-1]:
        if np.linalg.norm(p[:2] - out[-1][:2]) > MIN_SEGMENT:
            out.append(p)
    last = points[-1]
    if len(points) > 1:
        if np.linalg.norm(last[:2] - out[-1][:2]) > 1e-6:
            if len(out) > 1 and np.linalg.norm(last[:2] - out[-1][:2]) <= MIN_SEGMENT:
                out[-1] = last
            else:
                out.append(last)
    return out


@dataclass
class Leg:
    traj: PolynomialTrajectory
    t0: float
    targets: list[PlanSegment]
    knot_times: np.ndarray
    collide: Optional[PlanSegment]
    end_velocity: np.ndarray
    after_recovery: bool = False

    def remaining(self, t: float) -> list[PlanSegment]:
        """Targets whose knot time lies after simulated time ``t``."""
        tau = t - self.t0
        return [g for g, k in zip(self.targets, self.knot_times) if k > tau + 1e-9]


class Executor:
    """Runs one robot on one map; not reusable across runs."""

    def __init__(self, world: Map, params: RobotParams, sim: SimConfig = SimConfig(),
                 gains: Gains = Gains(), sensor: SensorModel = SensorModel(),
                 planner: PlannerParams = PlannerParams(), seed: int = 0,
                 initial_state: Optional[RobotState] = None):
        self.world = world
        self.params = params
        self.sim = sim
        self.planner = planner
        self.rng = np.random.default_rng(seed)
        self.controller = TrackingController(params, gains)
        self.sensor = ArmSensorPipeline(params.arm, sensor, self.rng, sim.f_threshold)
        if initial_state is None:
            initial_state = RobotState.at_rest([world.start[0], world.start[1], world.altitude],
                                               None, params.arm)
        self.state = initial_state
        self.mode = TRACK
        self.leg: Optional[Leg] = None
        self.pending: list[PlanSegment] = []
        self.plan_kind = "cp"
        self.hold: Optional[FlatSetpoint] = None
        self.recovery: Optional[tuple[PolynomialTrajectory, float, float]] = None
        self.contacts: list[ContactEvent] = []
        self.touched: list[int] = []
        self.plans: list[Plan] = []
        self.traj_gen_time = 0.0
        self.n_legs = 0
        self.references: list[tuple[float, PolynomialTrajectory]] = []
        self.rows: list[tuple] = []
        self._fb = deque()
        self._fb_next = 0.0
        self._fb_state = (self.state.r.copy(), self.state.v.copy())
        self._detect_t = 0.0
        self._detect_pos: Optional[np.ndarray] = None
        self._was_touching = False
        self._current_contact_planned = False
        self.last_contact_planned = False
        self._fresh_recovery = False
        self.reached_at = math.nan
        self.crashed: Optional[int] = None
        # called after each recovery; may return a replacement plan
        self.replanner: Optional[Callable[["Executor"], Optional[Plan]]] = None

    # ------------------------------------------------------------------ legs
    def set_plan(self, plan: Plan) -> None:
        self.plans.append(plan)
        self.plan_kind = "baseline" if plan.planner_id in BASELINES else "cp"
        self.pending = list(plan.segments)
        self.leg = None
        if self.mode == TRACK:
            self._next_leg()

    def splice(self, pending: list[PlanSegment], plan: Plan) -> None:
        """Keep the current leg and replace everything after it."""
        self.plans.append(plan)
        self.pending = list(pending)

    def _take_leg_segments(self) -> list[PlanSegment]:
        segs = []
        while self.pending:
            s = self.pending[0]
            if s.kind == RECOVER:
                # recovery targets are recomputed from the measured force
                self.pending.pop(0)
                continue
            segs.append(self.pending.pop(0))
            if s.kind == COLLIDE:
                break
        return segs

    def _next_leg(self, segs: Optional[list[PlanSegment]] = None) -> None:
        if segs is None:
            segs = self._take_leg_segments()
        if not segs:
            self.leg = None
            return
        t0 = time.perf_counter()
        self.leg = self._build_leg(segs)
        self.leg.after_recovery = bool(self.contacts) and self._fresh_recovery
        self._fresh_recovery = False
        self.traj_gen_time += time.perf_counter() - t0
        self.n_legs += 1
        self.references.append((self.leg.t0, self.leg.traj))

    def _build_leg(self, segs: list[PlanSegment]) -> Leg:
        s = self.state
        alt = self.world.altitude
        yaw0 = yaw_of(s.R)
        collide = segs[-1] if segs[-1].kind == COLLIDE else None
        pts = [np.array([s.r[0], s.r[1], s.r[2]])] + [np.array([g.target[0], g.target[1], alt]) for g in segs]
        pts = _dedupe(pts)
        if len(pts) < 2:
            # already at the target: a short hover leg keeps the machinery uniform
            pts = [pts[0], pts[0] + np.array([1e-3, 0.0, 0.0])]
        P = np.array(pts)
        start = BoundaryCondition(velocity=np.array([s.v[0], s.v[1], s.v[2], 0.0]),
                                  acceleration=np.zeros(4))
        if self.plan_kind == "baseline":
            traj, ends = self._baseline_traj(P, yaw0, start)
            v_end = np.zeros(3)
        else:
            traj, ends, v_end = self._cp_traj(P, yaw0, start, collide)
        # knot time of each original target, for resuming after contacts
        knots = []
        for g in segs:
            k = int(np.argmin(np.linalg.norm(P[1:, :2] - np.asarray(g.target), axis=1)))
            knots.append(ends[k])
        return Leg(traj, self.state.t, segs, np.array(knots), collide, v_end)

    def _baseline_traj(self, P: np.ndarray, yaw0: float, start: BoundaryCondition):
        """One polynomial through the resampled waypoint chain, rest-to-rest timing per piece."""
        pp = self.planner
        dense = resample_polyline(P, pp.waypoint_spacing)
        T = np.array([segment_time(float(np.linalg.norm(b - a)), pp.baseline_speed, pp.a_max)
                      for a, b in zip(dense[:-1], dense[1:])])
        d = np.diff(dense[:, :2], axis=0)
        yaws = unwrap_yaw([yaw0] + list(np.arctan2(d[:, 1], d[:, 0])))
        traj = min_snap(np.column_stack((dense, yaws)), T, start, BoundaryCondition.rest(4))
        # map the original corners onto the dense knot times
        t_knots = np.cumsum(T)
        ends = [t_knots[int(np.argmin(np.linalg.norm(dense[1:] - p, axis=1)))] for p in P[1:]]
        return traj, ends

    def _cp_traj(self, P: np.ndarray, yaw0: float, start: BoundaryCondition,
                 collide: Optional[PlanSegment]):
        """Straight runs that stop at every corner; a contact leg ends at the collide speed."""
        pp = self.planner
        v = pp.collide_speed
        piece = v * v / (2.0 * pp.a_max)
        parts = []
        ends = []
        yaw = yaw0
        v_end = np.zeros(3)
        for i in range(len(P) - 1):
            d = P[i + 1] - P[i]
            heading = math.atan2(d[1], d[0])
            last = i == len(P) - 2
            if last and collide is not None:
                u = self._aim(collide.obstacle_id, P[-1][:2])
                heading = math.atan2(u[1], u[0])
                u3 = np.array([u[0], u[1], 0.0])
                run = straight_run(P[i], P[i + 1], yaw, heading, v, pp.a_max, piece,
                                   start if i == 0 else None, collide.speed_at_target, u3)
                v_end = u3 * collide.speed_at_target
            else:
                run = straight_run(P[i], P[i + 1], yaw, heading, v, pp.a_max, piece,
                                   start if i == 0 else None)
            yaw = float(run.evaluate(run.total_time)[3])
            parts.append(run)
            ends.append(sum(p.total_time for p in parts))
        return concatenate(parts), ends, v_end

    def _aim(self, target_id: int, frm: np.ndarray) -> np.ndarray:
        """Unit approach direction: toward a pole centre, or along a wall's normal."""
        frm = np.asarray(frm, dtype=float)[:2]
        try:
            d = np.asarray(self.world.obstacle(target_id).center) - frm
        except KeyError:
            wall = next((w for w in self.world.walls if w.id == target_id), None)
            if wall is None:
                raise KeyError(f"no pole or wall with id {target_id}") from None
            a, b = np.asarray(wall.start, dtype=float), np.asarray(wall.end, dtype=float)
            t = np.clip(np.dot(frm - a, b - a) / np.dot(b - a, b - a), 0.0, 1.0)
            d = a + t * (b - a) - frm
        return d / np.linalg.norm(d)

    # -------------------------------------------------------------- setpoints
    def _setpoint(self) -> FlatSetpoint:
        t = self.state.t
        if self.mode == CONTACT_HOLD:
            return self.hold
        if self.mode == RECOVER_MODE:
            traj, t0, _ = self.recovery
            return traj.sample(t - t0)
        if self.mode == DONE or self.leg is None:
            if self.hold is None:
                self.hold = FlatSetpoint(np.array([self.world.goal[0], self.world.goal[1], self.world.altitude]),
                                         yaw=yaw_of(self.state.R))
            return self.hold
        tau = t - self.leg.t0
        T = self.leg.traj.total_time
        if tau <= T or self.leg.collide is None:
            return self.leg.traj.sample(tau)
        # past the end of a collide leg: keep pushing at the collide velocity, but only so far
        end = self.leg.traj.sample(T)
        speed = float(np.linalg.norm(self.leg.end_velocity))
        reach = self.sim.push_through / speed if speed > 0 else 0.0
        if tau - T >= reach:
            return FlatSetpoint(end.r + self.leg.end_velocity * reach, yaw=end.yaw)
        return FlatSetpoint(end.r + self.leg.end_velocity * (tau - T), self.leg.end_velocity,
                            np.zeros(3), end.yaw)

    def _measured(self) -> RobotState:
        s = self.state
        if s.t + 1e-12 >= self._fb_next:
            self._fb.append((s.t, s.r.copy(), s.v.copy()))
            while len(self._fb) > 1 and self._fb[1][0] <= s.t - self.sim.feedback_delay + 1e-12:
                self._fb.popleft()
            _, r, v = self._fb[0]
            self._fb_state = (r, v)
            self._fb_next += 1.0 / self.sim.feedback_rate
        r, v = self._fb_state
        return RobotState(r, v, s.R, s.omega, s.l)

    # --------------------------------------------------------------- contacts
    def _touched_obstacle(self) -> Optional[int]:
        s = self.state
        tip = s.r + s.R[:, 0] * s.l
        if not self.world.obstacles:
            return None
        d = np.linalg.norm(self.world.centers - tip[:2], axis=1) - self.world.radii
        k = int(np.argmin(d))
        return int(self.world.ids[k]) if d[k] < 0.05 else None

    def _start_hold(self) -> None:
        self.mode = CONTACT_HOLD
        self._detect_t = self.state.t
        self.hold = FlatSetpoint(self.state.r.copy(), yaw=yaw_of(self.state.R))
        self._current_contact_planned = bool(self.leg is not None and self.leg.collide is not None)

    def _start_recovery(self, f_max: float) -> None:
        s = self.state
        planned = bool(self.leg is not None and self.leg.collide is not None)
        if self.mode == CONTACT_HOLD:
            planned = self._current_contact_planned
            t_detect = self._detect_t
        else:
            t_detect = s.t
        yaw = yaw_of(s.R)
        t0 = time.perf_counter()
        traj = recovery_trajectory(s.r, s.v, s.R, f_max, self.sim.recovery, self.world.altitude, yaw)
        self.traj_gen_time += time.perf_counter() - t0
        r_n = recovery_setpoint(s.r, s.R, f_max, self.sim.recovery.eta, self.sim.recovery.d0,
                                self.world.altitude)
        oid = self.leg.collide.obstacle_id if (planned and self.leg and self.leg.collide) else self._touched_obstacle()
        self.contacts.append(ContactEvent(t_detect, s.t, f_max, s.r.copy(), r_n, oid, planned))
        hold_for = max(traj.total_time, self.sim.recovery_time)
        self.recovery = (traj, s.t, hold_for)
        self.references.append((s.t, traj))
        # resume the interrupted leg afterwards unless the contact was the planned one
        if self.leg is not None and not planned:
            self.pending = self.leg.remaining(s.t) + self.pending
        self.last_contact_planned = planned
        self.leg = None
        self.mode = RECOVER_MODE

    # ------------------------------------------------------------------- loop
    def _record(self, f_hat: float) -> None:
        s = self.state
        q = quat_from_rotmat(s.R)
        self.rows.append((s.t, s.r[0], s.r[1], s.r[2], s.v[0], s.v[1], s.v[2], q[0], q[1], q[2], q[3],
                          s.l, s.f_e, f_hat, MODE_CODES[self.mode]))

    def step(self) -> list[str]:
        sp = self._setpoint()
        cmd = self.controller(self._measured(), sp)
        self.state = step_dynamics(self.state, cmd, self.world, self.sim.dt, self.params)
        s = self.state
        if s.in_contact and not self._was_touching:
            oid = self._touched_obstacle()
            if oid is not None and oid not in self.touched:
                self.touched.append(oid)
        self._was_touching = s.in_contact
        if self.world.obstacles:
            d = np.hypot(self.world.centers[:, 0] - s.r[0], self.world.centers[:, 1] - s.r[1])
            hit = np.flatnonzero(d < self.world.radii + self.sim.body_radius)
            if hit.size:
                self.crashed = int(self.world.ids[hit[0]])
        events = self.sensor.update(s.t, s.l) if self.params.variant == COMPLIANT else []
        self._react(events)
        self._record(self.sensor.f_hat if self.params.variant == COMPLIANT else s.f_e)
        return events

    def _react(self, events: list[str]) -> None:
        s = self.state
        if self.params.variant == COMPLIANT:
            for ev in events:
                if ev == COLLISION_DETECTED and self.mode == TRACK:
                    self._start_hold()
                elif ev == HANDLING_START:
                    f_max = self.sensor.state.f_hat_max
                    self.sensor.acknowledge()
                    if self.mode == CONTACT_HOLD:
                        self._start_recovery(f_max)
        elif self.mode == TRACK and detect_rigid(s.accel, 9.81):
            self._start_recovery(self.sim.rigid_f_max)
        if self.mode == TRACK and self.leg is not None and self.leg.collide is not None:
            if s.t - self.leg.t0 > self.leg.traj.total_time + self.sim.contact_timeout:
                # the planned contact never registered; recover as if it had
                f_max = self.planner.nominal_f_max(self.leg.collide.speed_at_target)
                self._start_recovery(f_max)
        if self.mode == RECOVER_MODE:
            traj, t0, hold_for = self.recovery
            if s.t - t0 >= hold_for:
                self.hold = FlatSetpoint(traj.sample(traj.total_time).r, yaw=yaw_of(s.R))
                self.mode = TRACK
                self.recovery = None
                self.on_recovered()
        if self.mode == TRACK and self.leg is None and not self.pending:
            self._check_goal()
        elif self.mode == TRACK and self.leg is not None and self.leg.collide is None and not self.pending:
            self._check_goal()
        if self.mode == TRACK and self.leg is not None and self.leg.collide is None and self.pending:
            if s.t - self.leg.t0 >= self.leg.traj.total_time:
                self._next_leg()

    def on_recovered(self) -> None:
        self._fresh_recovery = self.last_contact_planned
        if self.replanner is not None:
            plan = self.replanner(self)
            if plan is not None:
                self.set_plan(plan)
                return
        self._next_leg()

    def _check_goal(self) -> None:
        s = self.state
        g = np.array([self.world.goal[0], self.world.goal[1], self.world.altitude])
        if (np.linalg.norm(s.r - g) < self.sim.goal_tol_pos
                and np.linalg.norm(s.v) < self.sim.goal_tol_vel):
            self.reached_at = s.t
            self.mode = DONE

    def result(self, error: str = "") -> ExecutionResult:
        trace = np.array(self.rows) if self.rows else np.zeros((0, len(TRACE_COLUMNS)))
        return ExecutionResult(trace, TRACE_COLUMNS, math.isfinite(self.reached_at), self.reached_at,
                               self.contacts, self.touched, self.plans, self.traj_gen_time, self.n_legs,
                               error, list(self.references))

    def run(self, plan: Optional[Plan] = None, until: Optional[float] = None,
            hook: Optional[Callable[["Executor"], None]] = None) -> ExecutionResult:
        if plan is not None:
            self.set_plan(plan)
        end = self.sim.max_time if until is None else until
        while self.mode != DONE and self.state.t < end - 1e-12 and self.crashed is None:
            self.step()
            if hook is not None:
                hook(self)
        return self.result(self.status(until is not None))

    def status(self, partial: bool = False) -> str:
        if self.crashed is not None:
            return f"crash into obstacle {self.crashed}"
        if self.mode == DONE or partial:
            return ""
        return "timeout"


def execute_plan(plan: Plan, world: Map, params: RobotParams, sim: SimConfig = SimConfig(),
                 gains: Gains = Gains(), sensor: SensorModel = SensorModel(),
                 planner: PlannerParams = PlannerParams(), seed: int = 0) -> ExecutionResult:
    ex = Executor(world, params, sim, gains, sensor, planner, seed)
    return ex.run(plan)
