"""Cascaded tracking controller.

Position errors give a desired inertial force; its direction and the yaw
reference give a desired attitude; a quaternion attitude loop gives body-rate
references; a proportional rate loop with gyroscopic feedforward gives the
body torque.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .so3 import cross3, norm3, quat_from_rotmat
from .vehicle import RobotParams, RobotState, WrenchCommand


class DegenerateThrustError(ValueError):
    """Desired force too small to define a thrust direction."""


class SingularYawError(ValueError):
    """Thrust direction parallel to the yaw heading."""


@dataclass(frozen=True)
class FlatSetpoint:
    r: np.ndarray
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0

    @classmethod
    def hover(cls, position, yaw: float = 0.0) -> "FlatSetpoint":
        return cls(np.asarray(position, dtype=float), yaw=yaw)


@dataclass(frozen=True)
class Gains:
    K_p: tuple[float, float, float] = (6.0, 6.0, 8.0)
    K_d: tuple[float, float, float] = (4.0, 4.0, 5.0)
    k_att: float = 6.0
    k_rate: tuple[float, float, float] = (0.4, 0.4, 0.15)

    def __post_init__(self):
        for name in ("K_p", "K_d", "k_rate"):
            vals = getattr(self, name)
            if len(vals) != 3 or any(not x > 0 for x in vals):
                raise ValueError(f"gains: {name} entries must be positive")
        if not self.k_att > 0:
            raise ValueError("gains: k_att must be positive")


def position_control(state: RobotState, sp: FlatSetpoint, gains: Gains, M: float,
                     g: float = 9.81) -> np.ndarray:
    """Desired inertial force from position, velocity and feedforward terms."""
    Kp = np.asarray(gains.K_p)
    Kd = np.asarray(gains.K_d)
    F = -Kd * (state.v - sp.v) - Kp * (state.r - sp.r) + M * np.asarray(sp.a)
    F[2] += M * g
    return F


def desired_attitude(F_des: np.ndarray, yaw: float, M: float = 1.25, g: float = 9.81) -> np.ndarray:
    """Rotation whose z-axis is along ``F_des`` and whose heading is ``yaw``."""
    norm = norm3(F_des)
    if norm < 0.05 * M * g:
        raise DegenerateThrustError(f"|F_des| = {norm:.3g} N")
    z = F_des / norm
    heading = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    y = cross3(z, heading)
    ny = norm3(y)
    if ny < 1e-6:
        raise SingularYawError("thrust axis parallel to heading")
    y /= ny
    x = cross3(y, z)
    return np.column_stack((x, y, z))


def attitude_control(R: np.ndarray, R_des: np.ndarray, omega: np.ndarray, gains: Gains,
                     inertia) -> np.ndarray:
    """Body torque from the quaternion attitude error and body rates.

    The error quaternion is that of ``R^T R_des``, i.e. ``q(R)^-1 * q(R_des)``.
    """
    q_e = quat_from_rotmat(R.T @ R_des)
    sign = 1.0 if q_e[0] >= 0.0 else -1.0
    omega_des = (2.0 * gains.k_att * sign) * q_e[1:]
    J = np.asarray(inertia, dtype=float)
    return np.asarray(gains.k_rate) * (omega_des - omega) + cross3(omega, J * omega)


def thrust_command(F_des: np.ndarray, R: np.ndarray) -> float:
    """Projection of the desired force on the current body z-axis."""
    return float(F_des @ R[:, 2])


class TrackingController:
    """Stateful wrapper that remembers the last valid desired attitude."""

    def __init__(self, params: RobotParams, gains: Gains = Gains()):
        self.params = params
        self.gains = gains
        self.R_des: Optional[np.ndarray] = None

    def __call__(self, state: RobotState, sp: FlatSetpoint) -> WrenchCommand:
        p = self.params
        F = position_control(state, sp, self.gains, p.mass, p.g)
        try:
            self.R_des = desired_attitude(F, sp.yaw, p.mass, p.g)
        except (DegenerateThrustError, SingularYawError):
            if self.R_des is None:
                self.R_des = state.R.copy()
        m_T = attitude_control(state.R, self.R_des, state.omega, self.gains, p.inertia)
        f_T = min(max(thrust_command(F, state.R), 0.0), p.max_thrust)
        return WrenchCommand(f_T, m_T)
