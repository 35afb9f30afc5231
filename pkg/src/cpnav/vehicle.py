"""Quadrotor rigid-body dynamics with a prismatic compliant arm.

The arm lies along the body x-axis and ends in a massless shield.  Its tip is
kinematically constrained to the first surface hit by the ray ``r + s R e1``;
the reach ``s`` therefore sets the arm length and, through a spring-damper,
the contact force that pushes the body back along ``-x_b``.

Two contact regimes exist for the compliant arm:

* ``l_min <= s < l_max``: preloaded spring plus compression-only damping.
* ``s < l_min``: the arm has bottomed out; the spring force saturates and a
  stiff stop (shield and mount compliance) resists further approach.

The rigid variant keeps ``l = l_max`` and applies a linear penalty force.

The ray only models contact through the tip.  When the arm sweeps sideways
into a pole the reach appears well inside ``l_max`` without any approach;
such lateral entries are ignored until the ray clears the obstacle, and
compression is rate-limited by the fastest possible frontal approach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .so3 import cross3, expm_so3, norm3, orthonormalize
from .world import Map, Wall

COMPLIANT = "compliant"
RIGID = "rigid"
SUBSTEPS = 10
RATE_EPS = 1e-5


class SimulationFault(RuntimeError):
    """The integrator produced a non-finite state."""


@dataclass(frozen=True)
class ArmParams:
    k_l: float = 3800.0
    l_max: float = 0.28
    l_min: float = 0.28 - 0.0254
    l_0: float = 0.002
    c_arm: float = 76.49  # calibrate_arm_damping()
    k_stop: float = 2.0e4
    c_stop: float = 100.0
    rigid_stiffness: float = 1.2154e6  # calibrate_rigid_stiffness()

    def __post_init__(self):
        if not self.l_min < self.l_max:
            raise ValueError("arm: l_min must be below l_max")
        if not self.k_l > 0:
            raise ValueError("arm: k_l must be positive")
        if self.l_0 < 0:
            raise ValueError("arm: l_0 must be non-negative")
        if self.c_arm < 0 or self.k_stop < 0 or self.c_stop < 0 or self.rigid_stiffness <= 0:
            raise ValueError("arm: damping and stiffness values must be non-negative")

    @property
    def saturation_force(self) -> float:
        return self.k_l * (self.l_max - self.l_min + self.l_0)


@dataclass(frozen=True)
class RobotParams:
    mass: float = 1.25
    inertia: tuple[float, float, float] = (0.01, 0.01, 0.02)
    g: float = 9.81
    arm: ArmParams = field(default_factory=ArmParams)
    variant: str = COMPLIANT
    thrust_ceiling_factor: float = 4.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if any(not j > 0 for j in self.inertia):
            raise ValueError("inertia must be positive definite")
        if self.g < 0:
            raise ValueError("g must be non-negative")
        if self.variant not in (COMPLIANT, RIGID):
            raise ValueError(f"variant must be '{COMPLIANT}' or '{RIGID}'")

    @property
    def max_thrust(self) -> float:
        return self.thrust_ceiling_factor * self.mass * 9.81

    @property
    def inertia_matrix(self) -> np.ndarray:
        return np.diag(self.inertia)


@dataclass
class RobotState:
    r: np.ndarray
    v: np.ndarray
    R: np.ndarray
    omega: np.ndarray
    l: float
    l_dot: float = 0.0
    t: float = 0.0
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    peak_accel: float = 0.0
    f_e: float = 0.0
    in_contact: bool = False
    reach: float = math.inf

    @classmethod
    def at_rest(cls, position, R: Optional[np.ndarray] = None, arm: ArmParams = ArmParams()):
        return cls(np.asarray(position, dtype=float).copy(), np.zeros(3),
                   np.eye(3) if R is None else np.asarray(R, dtype=float).copy(),
                   np.zeros(3), arm.l_max)

    def copy(self) -> "RobotState":
        return replace(self, r=self.r.copy(), v=self.v.copy(), R=self.R.copy(),
                       omega=self.omega.copy(), accel=self.accel.copy())


@dataclass(frozen=True)
class WrenchCommand:
    f_T: float
    m_T: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class ContactResult:
    f_e: float
    l: float
    l_dot: float
    in_contact: bool
    reach: float


def _ray_reach(r: np.ndarray, u: np.ndarray, world: Optional[Map], s_max: float) -> float:
    """Distance along the ray r + s u to the first pole, wall or ground hit.

    Returns ``inf`` when nothing lies within ``s_max``.  A ray starting inside
    a pole reports 0.
    """
    best = math.inf
    if u[2] < -1e-12:
        s = -r[2] / u[2]
        if s < best:
            best = max(s, 0.0)
    if world is None:
        return best if best <= s_max else math.inf
    ux, uy = u[0], u[1]
    a = ux * ux + uy * uy
    if world.obstacles and a > 1e-12:
        f = r[:2] - world.centers
        rad = world.radii
        dist2 = f[:, 0] ** 2 + f[:, 1] ** 2
        near = dist2 < (rad + s_max) ** 2
        if np.any(near):
            fn = f[near]
            c = dist2[near] - rad[near] ** 2
            if np.any(c <= 0.0):
                return 0.0
            b = fn[:, 0] * ux + fn[:, 1] * uy
            disc = b * b - a * c
            ok = disc > 0.0
            if np.any(ok):
                s = (-b[ok] - np.sqrt(disc[ok])) / a
                s = s[s >= 0.0]
                if s.size:
                    best = min(best, float(s.min()))
    if world.walls and a > 1e-12:
        for (x1, y1), (x2, y2) in world.wall_array:
            ex, ey = x2 - x1, y2 - y1
            den = ux * ey - uy * ex
            if abs(den) < 1e-14:
                continue
            wx, wy = x1 - r[0], y1 - r[1]
            s = (wx * ey - wy * ex) / den
            q = (wx * uy - wy * ux) / den
            if s >= 0.0 and 0.0 <= q <= 1.0 and s < best:
                best = s
    return best if best <= s_max else math.inf


def _reach_with_rate(state: RobotState, world: Optional[Map], s_max: float) -> tuple[float, float]:
    u = state.R[:, 0]
    s = _ray_reach(state.r, u, world, s_max)
    if not math.isfinite(s):
        return s, 0.0
    # kinematic rate from a short forward look along the current motion
    w = state.omega
    du = state.R @ np.array([0.0, w[2], -w[1]])
    s2 = _ray_reach(state.r + RATE_EPS * state.v, u + RATE_EPS * du, world, 2.0 * s_max)
    if not math.isfinite(s2):
        return s, 0.0
    return s, (s2 - s) / RATE_EPS


def contact_force(reach: float, reach_rate: float, arm: ArmParams, variant: str) -> tuple[float, float]:
    """Contact force magnitude along ``-x_b`` and the resulting arm length."""
    if not reach < arm.l_max:
        return 0.0, arm.l_max
    if variant == RIGID:
        return arm.rigid_stiffness * (arm.l_max - reach), arm.l_max
    closing = max(0.0, -reach_rate)
    if reach >= arm.l_min:
        return arm.k_l * (arm.l_max - reach + arm.l_0) + arm.c_arm * closing, reach
    stop = arm.k_stop * (arm.l_min - reach) - arm.c_stop * reach_rate
    return arm.saturation_force + max(0.0, stop), arm.l_min


def contact_resolve(state: RobotState, world: Optional[Map], params: RobotParams,
                    prev_reach: Optional[float] = None, h: float = 0.0) -> ContactResult:
    """Arm length, arm rate and contact force for the current pose.

    With ``prev_reach`` (the effective reach one substep of length ``h``
    earlier) the lateral-entry and rate-limit rules apply; the returned
    ``reach`` is then the effective one, ``inf`` meaning no tip contact.
    """
    arm = params.arm
    s, s_dot = _reach_with_rate(state, world, arm.l_max)
    if prev_reach is not None and math.isfinite(s):
        tol = 2.0 * (norm3(state.v) + arm.l_max * norm3(state.omega)) * h + 1e-4
        if not prev_reach < arm.l_max:
            if s < arm.l_max - tol:
                return ContactResult(0.0, arm.l_max, 0.0, False, math.inf)
        elif s < prev_reach - tol:
            s = prev_reach - tol
    f, l = contact_force(s, s_dot, arm, params.variant)
    in_contact = f > 0.0
    l_dot = s_dot if (in_contact and params.variant == COMPLIANT and arm.l_min < s) else 0.0
    return ContactResult(f, l, l_dot, in_contact, s)


def _check_finite(state: RobotState) -> None:
    total = state.r.sum() + state.v.sum() + state.R.sum() + state.omega.sum()
    if not math.isfinite(total):
        raise SimulationFault(f"non-finite state at t={state.t:.6f}")


def step_dynamics(state: RobotState, cmd: WrenchCommand, world: Optional[Map], dt: float,
                  params: RobotParams, external_force: Optional[np.ndarray] = None) -> RobotState:
    """Advance the rigid body by ``dt`` with semi-implicit Euler.

    The step is split into ``SUBSTEPS`` pieces when the arm is, or may come,
    in contact during it.  ``external_force`` (inertial, N) is applied along
    the arm axis at the tip and is used to emulate hand pushes.
    """
    if not 0.0 < dt <= 0.005:
        raise ValueError("dt must lie in (0, 0.005]")
    arm = params.arm
    M = params.mass
    J = np.asarray(params.inertia, dtype=float)
    f_T = min(max(float(cmd.f_T), 0.0), params.max_thrust)
    m_T = np.asarray(cmd.m_T, dtype=float)

    speed = norm3(state.v) + arm.l_max * norm3(state.omega)
    horizon = arm.l_max + speed * dt + 1e-3
    n = SUBSTEPS if math.isfinite(_ray_reach(state.r, state.R[:, 0], world, horizon)) else 1
    h = dt / n

    r, v, R, w = state.r.copy(), state.v.copy(), state.R.copy(), state.omega.copy()
    v_start = v.copy()
    peak = 0.0
    res = ContactResult(0.0, arm.l_max, 0.0, False, math.inf)
    gvec = np.array([0.0, 0.0, -params.g])
    prev = state.reach
    for _ in range(n):
        if n > 1:
            res = contact_resolve(RobotState(r, v, R, w, arm.l_max), world, params, prev, h)
            prev = res.reach
        force = f_T * R[:, 2] - res.f_e * R[:, 0]
        if external_force is not None:
            force = force + external_force
        a = gvec + force / M
        peak = max(peak, norm3(a))
        v = v + h * a
        r = r + h * v
        w = w + h * (cross3(J * w, w) + m_T) / J
        R = orthonormalize(R @ expm_so3(w * h))

    out = RobotState(r, v, R, w, res.l, res.l_dot, state.t + dt, (v - v_start) / dt, peak,
                     res.f_e, res.in_contact, res.reach if res.reach < arm.l_max else math.inf)
    _check_finite(out)
    return out


def kinematic_accel(state: RobotState) -> float:
    """Gravity-compensated acceleration magnitude seen over the last step."""
    return float(np.linalg.norm(state.accel))


@dataclass
class DropTrace:
    t: np.ndarray
    r: np.ndarray
    v: np.ndarray
    a: np.ndarray
    l: np.ndarray
    f_e: np.ndarray
    peak_accel: float
    impact_speed: float


ARM_DOWN = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])


def run_drop_test(params: RobotParams, height: float, dt: float = 1e-3,
                  max_time: float = 3.0) -> DropTrace:
    """Passive fall, arm pointing down, from a tip height of ``height``.

    Records until the rebound apex (or until the body comes to rest on the
    arm).  ``peak_accel`` is the largest substep acceleration magnitude.
    """
    if not height > 0:
        raise ValueError("height must be positive")
    state = RobotState.at_rest([0.0, 0.0, height + params.arm.l_max], ARM_DOWN, params.arm)
    cmd = WrenchCommand(0.0)
    rows = []
    peak = 0.0
    impact_speed = 0.0
    touched = False
    while state.t < max_time:
        prev_vz = state.v[2]
        state = step_dynamics(state, cmd, None, dt, params)
        if state.in_contact and not touched:
            touched = True
            impact_speed = -prev_vz
        peak = max(peak, state.peak_accel)
        rows.append((state.t, *state.r, *state.v, float(np.linalg.norm(state.accel)), state.l, state.f_e))
        if touched and not state.in_contact and prev_vz > 0.0 >= state.v[2]:
            break
    data = np.array(rows)
    return DropTrace(data[:, 0], data[:, 1:4], data[:, 4:7], data[:, 7], data[:, 8], data[:, 9],
                     peak, impact_speed)


@dataclass
class ImpactResult:
    approach_speed: float
    rebound_speed: float
    peak_force: float
    duration: float
    t: np.ndarray
    l: np.ndarray

    @property
    def restitution(self) -> float:
        return self.rebound_speed / self.approach_speed


def passive_impact(params: RobotParams, speed: float, dt: float = 1e-3,
                   gravity: bool = False) -> ImpactResult:
    """Fly unpowered, arm first, into a wall at ``speed`` and measure the rebound."""
    if not speed > 0:
        raise ValueError("speed must be positive")
    if not gravity:
        params = replace(params, g=0.0)
    wall = Map((-5.0, -5.0, 5.0, 5.0), walls=(Wall(0, (1.0, -5.0), (1.0, 5.0)),))
    gap = 0.01
    state = RobotState.at_rest([1.0 - params.arm.l_max - gap, 0.0, 1.0], None, params.arm)
    state.v = np.array([speed, 0.0, 0.0])
    hover = WrenchCommand(params.mass * params.g)
    ts, ls = [], []
    t_on = t_off = None
    peak = 0.0
    while state.t < 1.0:
        state = step_dynamics(state, hover, wall, dt, params)
        ts.append(state.t)
        ls.append(state.l)
        peak = max(peak, state.f_e)
        if state.in_contact and t_on is None:
            t_on = state.t
        if t_on is not None and not state.in_contact:
            t_off = state.t
            break
    if t_off is None:
        raise SimulationFault("impact did not separate within 1 s")
    return ImpactResult(speed, float(-state.v[0]), peak, t_off - t_on, np.array(ts), np.array(ls))


def _bisect(fn, lo: float, hi: float, target: float, iters: int, log: bool = False) -> float:
    """Root of the monotone increasing ``fn(x) - target`` on [lo, hi]."""
    for _ in range(iters):
        mid = math.sqrt(lo * hi) if log else 0.5 * (lo + hi)
        if fn(mid) < target:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi) if log else 0.5 * (lo + hi)


def calibrate_arm_damping(params: RobotParams = RobotParams(), speed: float = 3.0,
                          restitution: float = 1.6 / 3.0, iters: int = 30) -> float:
    """Arm damping giving the target wall-impact restitution (gravity-free)."""
    p = replace(params, variant=COMPLIANT)

    def loss(c):  # restitution falls with damping, so negate it
        return -passive_impact(replace(p, arm=replace(p.arm, c_arm=c)), speed).restitution

    return _bisect(loss, 0.0, 500.0, -restitution, iters)


def calibrate_rigid_stiffness(params: RobotParams = RobotParams(), height: float = 0.7,
                              peak: float = 3649.0, iters: int = 40) -> float:
    """Rigid contact stiffness giving the target drop-test peak acceleration."""
    p = replace(params, variant=RIGID)

    def peak_at(k):
        return run_drop_test(replace(p, arm=replace(p.arm, rigid_stiffness=k)), height).peak_accel

    return _bisect(peak_at, 1e4, 1e8, peak, iters, log=True)


__all__ = [
    "ArmParams", "RobotParams", "RobotState", "WrenchCommand", "ContactResult", "SimulationFault",
    "contact_force", "contact_resolve", "step_dynamics", "run_drop_test", "passive_impact",
    "calibrate_arm_damping", "calibrate_rigid_stiffness", "COMPLIANT", "RIGID", "ARM_DOWN",
]
