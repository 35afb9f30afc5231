"""Plan data types shared by all planners."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FREE_FLIGHT = "free_flight"
COLLIDE = "collide"
RECOVER = "recover"


class PlanningError(RuntimeError):
    """Base class for planner failures."""


class NoPathError(PlanningError):
    pass


class InfeasibleError(PlanningError):
    pass


@dataclass(frozen=True)
class PlanSegment:
    kind: str
    target: tuple[float, float]
    speed_at_target: float = 0.0
    obstacle_id: Optional[int] = None

    def __post_init__(self):
        if self.kind not in (FREE_FLIGHT, COLLIDE, RECOVER):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.kind == COLLIDE and (self.obstacle_id is None or not self.speed_at_target > 0):
            raise ValueError("collide segments need an obstacle id and a positive speed")


@dataclass
class Plan:
    segments: list[PlanSegment]
    start: tuple[float, float]
    planner_id: str
    plan_wall_time: float = 0.0  # ms
    counters: dict = field(default_factory=dict)

    @property
    def waypoints(self) -> np.ndarray:
        return np.array([self.start] + [s.target for s in self.segments], dtype=float)

    @property
    def length(self) -> float:
        """Straight-line length of the waypoint chain."""
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))

    @property
    def contacted(self) -> list[int]:
        return [s.obstacle_id for s in self.segments if s.kind == COLLIDE]

    def to_dict(self) -> dict:
        return {
            "planner": self.planner_id,
            "start": list(self.start),
            "plan_wall_time_ms": self.plan_wall_time,
            "counters": dict(self.counters),
            "segments": [{"kind": s.kind, "target": list(s.target), "speed": s.speed_at_target,
                          "obstacle_id": s.obstacle_id} for s in self.segments],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Plan":
        segs = [PlanSegment(s["kind"], tuple(s["target"]), float(s["speed"]), s.get("obstacle_id"))
                for s in data["segments"]]
        return cls(segs, tuple(data["start"]), data["planner"], float(data.get("plan_wall_time_ms", 0.0)),
                   dict(data.get("counters", {})))


@dataclass(frozen=True)
class RRTParams:
    max_iters: int = 5000
    step: float = 0.5
    goal_bias: float = 0.1
    rewire_radius: float = 1.5
    seed: int = 0


@dataclass(frozen=True)
class PlannerParams:
    l_max: float = 0.28
    collide_speed: float = 3.0
    grid_resolution: float = 0.1
    waypoint_spacing: float = 0.5
    baseline_speed: float = 1.5
    a_max: float = 3.0
    eta: float = 0.01
    d0: float = 0.2
    nominal_force: tuple[tuple[float, float], ...] = ((2.5, 63.0), (3.0, 90.0))
    rrt: RRTParams = field(default_factory=RRTParams)

    def __post_init__(self):
        if not self.grid_resolution > 0:
            raise ValueError("grid_resolution must be positive")
        if not self.waypoint_spacing > 0:
            raise ValueError("waypoint_spacing must be positive")
        if not self.collide_speed > 0:
            raise ValueError("collide_speed must be positive")

    def nominal_f_max(self, speed: float) -> float:
        """Peak force expected at ``speed``, interpolated from the table."""
        speeds, forces = zip(*sorted(self.nominal_force))
        return float(np.interp(speed, speeds, forces))
