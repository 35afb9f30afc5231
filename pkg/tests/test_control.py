import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpnav.control import (DegenerateThrustError, FlatSetpoint, Gains, SingularYawError,
                           TrackingController, attitude_control, desired_attitude, position_control,
                           thrust_command)
from cpnav.so3 import from_euler, rot_x, rot_z, to_euler
from cpnav.trajgen import recovery_setpoint, recovery_trajectory
from cpnav.vehicle import RobotParams, RobotState, step_dynamics

P = RobotParams()
G = Gains()
MG = 1.25 * 9.81


def _state(r=(0, 0, 1), v=(0, 0, 0), R=None):
    s = RobotState.at_rest(r, R)
    s.v = np.asarray(v, dtype=float)
    return s


class TestPositionControl:
    def test_equilibrium(self):
        F = position_control(_state(), FlatSetpoint.hover([0, 0, 1]), G, 1.25)
        assert np.allclose(F, [0, 0, 12.2625], atol=1e-12)

    def test_position_error(self):
        gains = Gains(K_p=(6, 6, 6))
        F = position_control(_state(r=(0.1, 0, 1)), FlatSetpoint.hover([0, 0, 1]), gains, 1.25)
        assert np.allclose(F, [-0.6, 0, MG], atol=1e-12)

    def test_feedforward(self):
        sp = FlatSetpoint(np.array([0.0, 0, 1]), a=np.array([1.0, 0, 0]))
        F = position_control(_state(), sp, G, 1.25)
        assert np.allclose(F, [1.25, 0, MG], atol=1e-12)


class TestDesiredAttitude:
    def test_hover_identity(self):
        assert np.allclose(desired_attitude(np.array([0, 0, MG]), 0.0), np.eye(3), atol=1e-15)

    @given(st.floats(-math.pi, math.pi))
    def test_yaw_only(self, psi):
        assert np.allclose(desired_attitude(np.array([0, 0, MG]), psi), rot_z(psi), atol=1e-12)

    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=2), st.floats(2.0, 40.0),
           st.floats(-math.pi, math.pi))
    def test_construction(self, xy, fz, psi):
        F = np.array([xy[0], xy[1], fz])
        R = desired_attitude(F, psi)
        assert np.allclose(R[:, 2], F / np.linalg.norm(F), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
        # heading lies in the plane spanned by the body x axis and the thrust axis
        heading = np.array([math.cos(psi), math.sin(psi), 0.0])
        assert abs(R[:, 1] @ heading) < 1e-12

    def test_degenerate_thrust(self):
        with pytest.raises(DegenerateThrustError):
            desired_attitude(np.array([0.0, 0.0, 0.01]), 0.0)

    def test_singular_yaw(self):
        with pytest.raises(SingularYawError):
            desired_attitude(np.array([5.0, 0.0, 0.0]), 0.0)

    def test_controller_holds_previous_attitude_on_degenerate_thrust(self):
        ctl = TrackingController(P)
        ctl(_state(), FlatSetpoint.hover([0.2, 0, 1]))
        held = ctl.R_des.copy()
        # setpoint acceleration cancels gravity exactly
        sp = FlatSetpoint(np.array([0.0, 0, 1]), a=np.array([0.0, 0, -9.81]))
        ctl(_state(), sp)
        assert np.array_equal(ctl.R_des, held)


class TestAttitudeControl:
    def test_zero_error_zero_torque(self):
        R = from_euler(0.1, -0.2, 0.3)
        assert np.allclose(attitude_control(R, R, np.zeros(3), G, P.inertia), 0.0, atol=1e-15)

    def test_antipodal_yaw_is_finite(self):
        m = attitude_control(np.eye(3), rot_z(math.pi), np.zeros(3), G, P.inertia)
        assert np.all(np.isfinite(m)) and np.linalg.norm(m) > 0

    def test_tilt_about_body_x(self):
        gains = Gains(k_rate=(0.4, 0.4, 0.4))
        m = attitude_control(rot_x(math.radians(45)), np.eye(3), np.zeros(3), gains, P.inertia)
        axis = m / np.linalg.norm(m)
        assert np.allclose(np.abs(axis), [1, 0, 0], atol=1e-6)
        # restoring direction
        assert m[0] < 0

    def test_rate_damping(self):
        m = attitude_control(np.eye(3), np.eye(3), np.array([1.0, 0, 0]), G, P.inertia)
        assert m[0] == pytest.approx(-0.4)


@settings(max_examples=50)
@given(st.floats(-math.pi, math.pi), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5),
       st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_thrust_projection_is_yaw_invariant(psi, roll, pitch, F):
    R = from_euler(roll, pitch, 0.3)
    F = np.asarray(F)
    Rz = rot_z(psi)
    assert thrust_command(Rz @ F, Rz @ R) == pytest.approx(thrust_command(F, R), abs=1e-9)


def _fly(state, setpoint_fn, duration, dt=1e-3):
    ctl = TrackingController(P)
    rows = []
    while state.t < duration - 1e-9:
        cmd = ctl(state, setpoint_fn(state.t))
        state = step_dynamics(state, cmd, None, dt, P)
        rows.append((state.t, *state.r, *to_euler(state.R)))
    return state, np.array(rows)


def test_closed_loop_step_response():
    goal = np.array([1.0, 0.0, 1.0])
    _, tr = _fly(_state(), lambda t: FlatSetpoint.hover(goal), 6.0)
    err = np.linalg.norm(tr[:, 1:4] - goal, axis=1)
    after = tr[:, 0] >= 4.0
    assert err[after].max() < 0.05
    assert tr[:, 1].max() - 1.0 <= 0.3


def test_recovery_maneuver_reaches_large_pitch():
    """Rebound from a head-on 3 m/s collision, then track the recovery trajectory."""
    r_c = np.array([0.0, 0.0, 1.0])
    v_c = np.array([-1.6, 0.0, 0.0])
    traj = recovery_trajectory(r_c, v_c, np.eye(3), 90.0)
    r_n = recovery_setpoint(r_c, np.eye(3), 90.0)
    state, tr = _fly(_state(r=r_c, v=v_c), traj.sample, traj.total_time + 3.0)
    assert np.all(np.isfinite(tr))
    assert np.linalg.norm(state.r - r_n) < 0.1
    pitch = np.degrees(np.abs(tr[:, 5]))
    assert pitch.max() >= 45.0
