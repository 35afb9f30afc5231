"""Scenario definitions and the batch runner.

Every trial is a pure function of (scenario, run config, seed), so trials can
be farmed out to a process pool and their records still come back in a fixed
order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .control import FlatSetpoint, Gains, TrackingController
from .executor import Executor, ExecutionResult, SimConfig
from .metrics import MetricsRecord, aggregate, compute_metrics, max_tilt_deg, settle_time
from .planners import (COLLIDE, RECOVER, Plan, PlannerParams, PlanningError, PlanSegment, astar_plan,
                       cp_plan, online_replan, rrt_star_plan)
from .sensing import (COLLISION_DETECTED, HANDLING_START, ArmSensorPipeline, SensorModel, length_for_force,
                      static_estimate)
from .vehicle import COMPLIANT, RIGID, RobotParams, RobotState, SimulationFault, run_drop_test, step_dynamics
from .world import Map, Obstacle, Wall, experimental_map, generate_random_map, load_map

log = logging.getLogger(__name__)

KINDS = ("estimator_static", "estimator_dynamic", "drop", "wall_collision", "pole_collision",
         "plan_offline", "plan_online")
PLANNERS = ("cp", "cp_rigid", "astar", "rrtstar")
PLANNER_ALIASES = {"cp_compliant": "cp", "a*": "astar", "rrt*": "rrtstar"}
WALL_ID = 1000


class TrialError(RuntimeError):
    """A simulation fault, tagged with the trial it came from."""


def canonical_planner(name: str) -> str:
    key = name.strip().lower()
    key = PLANNER_ALIASES.get(key, key)
    if key not in PLANNERS:
        raise ValueError(f"unknown planner {name!r}; expected one of {', '.join(PLANNERS)}")
    return key


@dataclass(frozen=True)
class Scenario:
    kind: str = "plan_offline"
    variant: str = COMPLIANT
    variants: tuple[str, ...] = (COMPLIANT, RIGID)  # drop tests only
    heights: tuple[float, ...] = (0.3, 0.5, 0.7)
    forces: tuple[float, ...] = (30.0, 40.0, 50.0)
    speed: float = 3.0  # wall / pole approach speed
    impulse_peak: float = 60.0
    impulse_duration: float = 0.1
    map: str = "cluttered"  # experimental | cluttered | empty | path to a map file
    map_size: tuple[float, float] = (20.0, 20.0)
    n_obstacles: int = 30
    obstacle_radius: float = 0.3
    planners: tuple[str, ...] = PLANNERS
    collide_speed: float = 3.0
    rigid_collide_speed: float = 2.5
    rigid_recovery_time: float = 3.3
    sensing_range: float = 5.0
    replan_interval: float = 5.0
    settle_tol: float = 0.05
    settle_limit: float = 5.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"scenario.kind must be one of {', '.join(KINDS)}")
        for v in (self.variant, *self.variants):
            if v not in (COMPLIANT, RIGID):
                raise ValueError(f"scenario.variant must be '{COMPLIANT}' or '{RIGID}'")
        if any(not h > 0 for h in self.heights):
            raise ValueError("scenario.heights must be positive")
        if any(f < 0 for f in self.forces):
            raise ValueError("scenario.forces must be non-negative")
        for name in ("speed", "impulse_duration", "collide_speed", "rigid_collide_speed",
                     "sensing_range", "replan_interval", "settle_tol", "settle_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"scenario.{name} must be positive")
        if self.n_obstacles < 0:
            raise ValueError("scenario.n_obstacles must be non-negative")
        object.__setattr__(self, "planners", tuple(canonical_planner(p) for p in self.planners))


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario = field(default_factory=Scenario)
    robot: RobotParams = field(default_factory=RobotParams)
    gains: Gains = field(default_factory=Gains)
    planner: PlannerParams = field(default_factory=PlannerParams)
    sim: SimConfig = field(default_factory=SimConfig)
    sensor: SensorModel = field(default_factory=SensorModel)
    seeds: tuple[int, ...] = tuple(range(1, 11))
    out: str = "cpnav-out"
    plot: bool = False
    jobs: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


@dataclass(frozen=True)
class Trial:
    label: str
    seed: int
    height: float = math.nan
    force: float = math.nan
    variant: str = COMPLIANT


@dataclass
class TrialOutput:
    record: MetricsRecord
    result: Optional[ExecutionResult] = None
    plan: Optional[Plan] = None
    world: Optional[Map] = None
    raw_trace: Optional[tuple[tuple[str, ...], np.ndarray]] = None

    def trace(self) -> Optional[tuple[tuple[str, ...], np.ndarray]]:
        if self.result is not None:
            return self.result.columns, self.result.trace
        return self.raw_trace


# named presets for ``cpnav bench``; plain data merged under the user's config
SUITES = {
    "experimental": {"scenario": {"kind": "plan_offline", "map": "experimental",
                                  "planners": ["cp", "astar", "rrtstar"], "collide_speed": 2.5},
                     "planner": {"waypoint_spacing": 0.25}},
    "cluttered": {"scenario": {"kind": "plan_offline", "map": "cluttered"}},
    "online": {"scenario": {"kind": "plan_online", "map": "cluttered", "planners": ["cp", "astar"]}},
    "drop": {"scenario": {"kind": "drop"}},
    "estimator": {"scenario": {"kind": "estimator_static"}},
    "impulse": {"scenario": {"kind": "estimator_dynamic"}},
    "wall": {"scenario": {"kind": "wall_collision"}},
    "pole": {"scenario": {"kind": "pole_collision"}},
}
DROP_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz", "accel", "l", "f_e")


# ------------------------------------------------------------------ maps
def build_map(s: Scenario, seed: int) -> Map:
    if s.map == "experimental":
        return experimental_map()
    if s.map == "cluttered":
        return generate_random_map(s.map_size, s.n_obstacles, s.obstacle_radius, seed=seed)
    if s.map == "empty":
        hx, hy = s.map_size[0] / 2, s.map_size[1] / 2
        return Map((-hx, -hy, hx, hy), (), (), (-0.4 * s.map_size[0], -0.4 * s.map_size[1]),
                   (0.4 * s.map_size[0], 0.4 * s.map_size[1]), 1.0, "empty")
    return load_map(Path(s.map))


# ----------------------------------------------------------- enumeration
def enumerate_trials(cfg: RunConfig) -> list[Trial]:
    s = cfg.scenario
    if s.kind == "estimator_static":
        return [Trial(f"{f:g}N", seed, force=f) for f in s.forces for seed in cfg.seeds]
    if s.kind == "drop":
        return [Trial(f"{v}@{h:g}m", seed, height=h, variant=v)
                for v in s.variants for h in s.heights for seed in cfg.seeds]
    if s.kind in ("estimator_dynamic", "wall_collision", "pole_collision"):
        return [Trial(s.variant, seed, variant=s.variant) for seed in cfg.seeds]
    planners = s.planners
    if s.kind == "plan_online":
        planners = tuple(p for p in planners if p in ("cp", "astar"))
    return [Trial(p, seed, variant=RIGID if p == "cp_rigid" else COMPLIANT)
            for seed in cfg.seeds for p in planners]


# ----------------------------------------------------------------- trials
def _estimator_static(cfg: RunConfig, trial: Trial) -> TrialOutput:
    rng = np.random.default_rng(trial.seed)
    est = static_estimate(trial.force, cfg.robot.arm, cfg.sensor, rng)
    rec = MetricsRecord(cfg.scenario.kind, trial.label, trial.seed, COMPLIANT, True,
                        force_true=trial.force, force_est=est)
    return TrialOutput(rec)


def _estimator_dynamic(cfg: RunConfig, trial: Trial) -> TrialOutput:
    """Hover, take a half-sine push on the shield, and watch the estimator."""
    s = cfg.scenario
    params = replace(cfg.robot, variant=COMPLIANT)
    rng = np.random.default_rng(trial.seed)
    pipeline = ArmSensorPipeline(params.arm, cfg.sensor, rng, cfg.sim.f_threshold)
    ctrl = TrackingController(params, cfg.gains)
    state = RobotState.at_rest([0.0, 0.0, 1.0], None, params.arm)
    hover = FlatSetpoint.hover(state.r.copy())
    t_push = 0.5
    dt = cfg.sim.dt
    detected = False
    f_hat_max = 0.0
    true_max = 0.0
    for _ in range(int(round((t_push + s.impulse_duration + 1.0) / dt))):
        tau = state.t - t_push
        f = s.impulse_peak * math.sin(math.pi * tau / s.impulse_duration) if 0 <= tau <= s.impulse_duration else 0.0
        ext = -f * state.R[:, 0]
        state = step_dynamics(state, ctrl(state, hover), None, dt, params, ext)
        l_true = length_for_force(f, params.arm) if f > 0 else params.arm.l_max
        events = pipeline.update(state.t, l_true)
        if COLLISION_DETECTED in events:
            detected = True
        if HANDLING_START in events:
            pipeline.acknowledge()
        f_hat_max = max(f_hat_max, pipeline.f_hat)
        true_max = max(true_max, f)
    rec = MetricsRecord(s.kind, trial.label, trial.seed, COMPLIANT, detected,
                        force_true=true_max, f_hat_max=f_hat_max, force_est=f_hat_max)
    return TrialOutput(rec)


def _drop(cfg: RunConfig, trial: Trial) -> TrialOutput:
    params = replace(cfg.robot, variant=trial.variant)
    tr = run_drop_test(params, trial.height, cfg.sim.dt)
    rec = MetricsRecord(cfg.scenario.kind, trial.label, trial.seed, trial.variant, True,
                        peak_accel=tr.peak_accel, height=trial.height, speed=tr.impact_speed)
    data = np.column_stack((tr.t, tr.r, tr.v, tr.a, tr.l, tr.f_e))
    return TrialOutput(rec, raw_trace=(DROP_COLUMNS, data))


def _collision_metrics(rec: MetricsRecord, res: ExecutionResult, direction: np.ndarray,
                       t_end: float, s: Scenario) -> None:
    t = res.column("t")
    rec.n_contacts = len(res.contacts)
    rec.n_touched = len(res.touched)
    if not res.contacts:
        rec.error = rec.error or "no contact detected"
        return
    ev = res.contacts[0]
    if rec.variant == COMPLIANT:
        # what the estimator actually saw; a timed-out contact carries only the nominal force
        rec.f_hat_max = float(res.column("f_e_hat")[t <= ev.t_handling + 1e-9].max())
    else:
        rec.f_hat_max = ev.f_hat_max
    touching = res.column("f_e_true") > 0
    if np.any(touching):
        # backward speed at the moment the shield leaves the surface
        first = int(np.argmax(touching))
        release = first + int(np.argmax(~touching[first:])) if not touching[first:].all() else len(t) - 1
        rec.rebound_speed = float(-(res.trace[release, 4:7] @ direction))
    rec.settle_time = settle_time(t, res.positions, ev.r_n, ev.t_handling, t_end, s.settle_tol)
    after = t >= ev.t_handling
    rec.max_tilt = max_tilt_deg(res.trace[after, 7:11]) if np.any(after) else math.nan
    rec.peak_accel = math.nan


def _wall_collision(cfg: RunConfig, trial: Trial) -> TrialOutput:
    s = cfg.scenario
    params = replace(cfg.robot, variant=trial.variant)
    l_max = params.arm.l_max
    x_wall = 1.5
    r_c = np.array([x_wall - l_max, 0.0])
    run_up = 1.2 * s.speed ** 2 / (2 * cfg.planner.a_max) + 0.5
    start = (float(r_c[0] - run_up), 0.0)
    world = Map((start[0] - 1.0, -3.0, x_wall + 0.5, 3.0), (), (Wall(WALL_ID, (x_wall, -3.0), (x_wall, 3.0)),),
                start, start, 1.0, "wall")
    pp = replace(cfg.planner, collide_speed=s.speed)
    plan = Plan([PlanSegment(COLLIDE, (float(r_c[0]), 0.0), s.speed, WALL_ID),
                 PlanSegment(RECOVER, (float(r_c[0] - 1.0), 0.0), 0.0, WALL_ID)], start, "cp")
    ex = Executor(world, params, cfg.sim, cfg.gains, cfg.sensor, pp, trial.seed)
    ex.set_plan(plan)
    limit = cfg.sim.max_time
    while ex.state.t < limit - 1e-12:
        ex.step()
        if ex.contacts and limit == cfg.sim.max_time:
            limit = min(limit, ex.contacts[0].t_handling + s.settle_limit + 1.0)
    res = ex.result()
    rec = MetricsRecord(s.kind, trial.label, trial.seed, trial.variant, speed=s.speed)
    _collision_metrics(rec, res, np.array([1.0, 0.0, 0.0]), limit, s)
    rec.success = not rec.error and rec.settle_time <= s.settle_limit
    return TrialOutput(rec, res, plan, world)


def _pole_collision(cfg: RunConfig, trial: Trial) -> TrialOutput:
    """Single-pole crossing: collide, recover, detour, reach the goal."""
    s = cfg.scenario
    params = replace(cfg.robot, variant=trial.variant)
    world = Map((-3.0, -2.0, 3.0, 2.0), (Obstacle(0, (0.0, 0.0), 0.15),), (), (-2.5, 0.0), (2.5, 0.0), 1.0, "pole")
    pp = replace(cfg.planner, collide_speed=s.speed)
    plan = cp_plan(world.start, world.goal, world, pp)
    ex = Executor(world, params, cfg.sim, cfg.gains, cfg.sensor, pp, trial.seed)
    res = ex.run(plan)
    rec = MetricsRecord(s.kind, trial.label, trial.seed, trial.variant, speed=s.speed)
    compute_metrics([plan], res, world, pp.l_max, rec, cp=True)
    if res.contacts:
        ev = res.contacts[0]
        u = np.array([*(np.asarray(world.obstacle(0).center) - ev.r_c[:2]), 0.0])
        hold = max(cfg.sim.recovery_time, 0.0)
        _collision_metrics(rec, res, u / np.linalg.norm(u), ev.t_handling + hold, s)
    else:
        rec.error = rec.error or "no contact detected"
    rec.success = not rec.error and res.reached and rec.settle_time <= s.settle_limit
    return TrialOutput(rec, res, plan, world)


def planner_setup(cfg: RunConfig, name: str) -> tuple[RobotParams, SimConfig, PlannerParams]:
    """Robot variant, simulation and planner parameters for one planner entry."""
    s = cfg.scenario
    if name == "cp":
        return (replace(cfg.robot, variant=COMPLIANT), cfg.sim,
                replace(cfg.planner, collide_speed=s.collide_speed))
    if name == "cp_rigid":
        return (replace(cfg.robot, variant=RIGID), replace(cfg.sim, recovery_time=s.rigid_recovery_time),
                replace(cfg.planner, collide_speed=s.rigid_collide_speed))
    return replace(cfg.robot, variant=COMPLIANT), cfg.sim, cfg.planner


def make_planner(name: str, pp: PlannerParams, seed: int):
    """``(start, goal, known_map) -> Plan`` for the named planner."""
    if name in ("cp", "cp_rigid"):
        return lambda a, b, m: cp_plan(a, b, m, pp)
    if name == "astar":
        return lambda a, b, m: astar_plan(a, b, m, pp)
    return lambda a, b, m: rrt_star_plan(a, b, m, pp, seed=seed)


def _plan_offline(cfg: RunConfig, trial: Trial) -> TrialOutput:
    s = cfg.scenario
    world = build_map(s, trial.seed)
    params, sim, pp = planner_setup(cfg, trial.label)
    rec = MetricsRecord(s.kind, trial.label, trial.seed, params.variant)
    try:
        plan = make_planner(trial.label, pp, trial.seed)(world.start, world.goal, world)
    except PlanningError as exc:
        rec.error = f"planning failed: {exc}"
        return TrialOutput(rec, world=world)
    ex = Executor(world, params, sim, cfg.gains, cfg.sensor, pp, trial.seed)
    res = ex.run(plan)
    compute_metrics([plan], res, world, pp.l_max, rec, cp=trial.label.startswith("cp"))
    return TrialOutput(rec, res, plan, world)


def _plan_online(cfg: RunConfig, trial: Trial) -> TrialOutput:
    s = cfg.scenario
    world = build_map(s, trial.seed)
    params, sim, pp = planner_setup(cfg, trial.label)
    rec = MetricsRecord(s.kind, trial.label, trial.seed, params.variant)
    ex = Executor(world, params, sim, cfg.gains, cfg.sensor, pp, trial.seed)
    try:
        res, session = online_replan(ex, make_planner(trial.label, pp, trial.seed), world,
                                     s.sensing_range, s.replan_interval)
        n_replans = session.n_replans
    except PlanningError as exc:
        # includes stalls; score what was flown so far
        res = ex.result(f"{type(exc).__name__}: {exc}")
        n_replans = 0
        if len(res.trace) == 0:
            rec.error = res.error
            return TrialOutput(rec, world=world)
    compute_metrics(res.plans, res, world, pp.l_max, rec, cp=trial.label.startswith("cp"),
                    n_replans=n_replans)
    return TrialOutput(rec, res, res.plans[-1] if res.plans else None, world)


RUNNERS = {
    "estimator_static": _estimator_static,
    "estimator_dynamic": _estimator_dynamic,
    "drop": _drop,
    "wall_collision": _wall_collision,
    "pole_collision": _pole_collision,
    "plan_offline": _plan_offline,
    "plan_online": _plan_online,
}


def run_trial(cfg: RunConfig, trial: Trial) -> TrialOutput:
    try:
        return RUNNERS[cfg.scenario.kind](cfg, trial)
    except SimulationFault as exc:
        raise TrialError(f"{cfg.scenario.kind} {trial.label} seed {trial.seed}: {exc}") from exc


def _run_job(args) -> TrialOutput:
    cfg, trial, keep, safe = args
    try:
        out = run_trial(cfg, trial)
    except TrialError as exc:
        if not safe:
            raise
        log.warning("%s", exc)
        return TrialOutput(MetricsRecord(cfg.scenario.kind, trial.label, trial.seed, trial.variant,
                                         error=str(exc)))
    if not keep:
        out.result = None
        out.raw_trace = None
    return out


def run_trials(cfg: RunConfig, keep_traces: bool = True, safe: bool = False) -> list[TrialOutput]:
    """All trials of the configured scenario, in enumeration order.

    With ``safe`` a faulting trial yields a failed record instead of raising.
    """
    jobs = [(cfg, t, keep_traces, safe) for t in enumerate_trials(cfg)]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


def run_scenario(scenario: Scenario, cfg: RunConfig = RunConfig()) -> list[MetricsRecord]:
    return [o.record for o in run_trials(replace(cfg, scenario=scenario), keep_traces=False)]


def run_batch(cfg: RunConfig, keep_traces: bool = False) -> tuple[list[TrialOutput], dict]:
    """Run every trial and aggregate; per-trial failures are recorded, never raised."""
    outputs = run_trials(cfg, keep_traces, safe=True)
    return outputs, aggregate([o.record for o in outputs])


__all__ = ["SUITES", "Scenario", "RunConfig", "Trial", "TrialOutput", "TrialError", "KINDS", "PLANNERS",
           "build_map", "enumerate_trials", "planner_setup", "make_planner", "run_trial", "run_trials",
           "run_scenario", "run_batch", "canonical_planner"]
