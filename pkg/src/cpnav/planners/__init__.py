"""Path planners: contact-prioritized, grid A*, RRT*, and online replanning."""

from .astar import astar_plan
from .base import (COLLIDE, FREE_FLIGHT, RECOVER, InfeasibleError, NoPathError, Plan, PlannerParams,
                   PlanningError, PlanSegment, RRTParams)
from .cp import cp_plan
from .online import StallError, online_replan
from .rrtstar import rrt_star_plan

__all__ = [
    "COLLIDE", "FREE_FLIGHT", "RECOVER", "InfeasibleError", "NoPathError", "Plan", "PlannerParams",
    "PlanningError", "PlanSegment", "RRTParams", "StallError", "astar_plan", "cp_plan",
    "online_replan", "rrt_star_plan",
]
