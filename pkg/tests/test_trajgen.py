import math

import numpy as np
import pytest
from scipy.linalg import null_space

from cpnav.trajgen import (BoundaryCondition, SingularSystemError, allocate_times, min_snap,
                           profile_time, recovery_setpoint, recovery_trajectory, segment_time,
                           straight_run)

DEG = 7


def _drow(t, order):
    """Physical-time derivative row of the monomial basis at time t."""
    row = np.zeros(DEG + 1)
    for k in range(order, DEG + 1):
        row[k] = math.factorial(k) / math.factorial(k - order) * t ** (k - order)
    return row


def _snap_gram(T):
    x, w = np.polynomial.legendre.leggauss(10)
    t = 0.5 * T * (x + 1.0)
    rows = np.array([_drow(ti, 4) for ti in t])
    return (rows.T * (0.5 * T * w)) @ rows


def oracle(W, T, start_v=None, end_v=None, end_a=None, start_rest=True, end_rest=True):
    """Dense equality-constrained QP in physical coefficients, solved in the constraint nullspace.

    Returns (coeffs[m, D, 8], A, Q, b) for each output dimension.
    """
    W = np.asarray(W, float)
    m, D = len(W) - 1, W.shape[1]
    n = m * (DEG + 1)
    Q = np.zeros((n, n))
    for i in range(m):
        s = slice(i * 8, i * 8 + 8)
        Q[s, s] = _snap_gram(T[i])
    coeffs = np.zeros((m, D, 8))
    systems = []
    for d in range(D):
        A, b = [], []

        def pin(seg, t, order, val):
            r = np.zeros(n)
            r[seg * 8:seg * 8 + 8] = _drow(t, order)
            A.append(r)
            b.append(val)

        for i in range(m):
            pin(i, 0.0, 0, W[i, d])
            pin(i, T[i], 0, W[i + 1, d])
        for i in range(m - 1):
            for order in (1, 2, 3):
                r = np.zeros(n)
                r[i * 8:i * 8 + 8] = _drow(T[i], order)
                r[(i + 1) * 8:(i + 2) * 8] = -_drow(0.0, order)
                A.append(r)
                b.append(0.0)
        if start_rest:
            for order in (1, 2, 3):
                pin(0, 0.0, order, 0.0)
        elif start_v is not None:
            pin(0, 0.0, 1, start_v[d])
        if end_rest:
            for order in (1, 2, 3):
                pin(m - 1, T[-1], order, 0.0)
        else:
            if end_v is not None:
                pin(m - 1, T[-1], 1, end_v[d])
            if end_a is not None:
                pin(m - 1, T[-1], 2, end_a[d])
        A, b = np.array(A), np.array(b)
        c0 = np.linalg.lstsq(A, b, rcond=None)[0]
        N = null_space(A)
        z = -np.linalg.solve(N.T @ Q @ N, N.T @ Q @ c0)
        c = c0 + N @ z
        coeffs[:, d, :] = c.reshape(m, 8)
        systems.append((A, b, N))
    return coeffs, Q, systems


def _random_problem(rng, m):
    W = np.column_stack((rng.uniform(-3, 3, size=(m + 1, 3)), rng.uniform(-1, 1, size=m + 1)))
    T = rng.uniform(0.5, 2.0, size=m)
    return W, T


class TestMinSnap:
    def test_rest_to_rest_symmetry(self):
        traj = min_snap([[0, 0, 1], [1, 0, 1]], [2.0])
        for order in (1, 2, 3):
            assert np.allclose(traj.evaluate(0.0, order), 0.0, atol=1e-9)
            assert np.allclose(traj.evaluate(2.0 - 1e-15, order), 0.0, atol=1e-9)
        assert np.allclose(traj.evaluate(1.0)[:3], [0.5, 0, 1], atol=1e-12)

    @pytest.mark.parametrize("seed", range(12))
    def test_matches_dense_qp_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(1, 6))
        W, T = _random_problem(rng, m)
        ours = min_snap(W, T)
        ref, _, _ = oracle(W, T)
        scale = max(1.0, np.abs(ref).max())
        assert np.abs(ours.coeffs - ref).max() / scale < 1e-6

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_oracle_with_pinned_velocities(self, seed):
        rng = np.random.default_rng(100 + seed)
        m = int(rng.integers(1, 5))
        W, T = _random_problem(rng, m)
        v0 = rng.uniform(-2, 2, size=4)
        v1 = rng.uniform(-2, 2, size=4)
        ours = min_snap(W, T, BoundaryCondition(velocity=v0),
                        BoundaryCondition(velocity=v1, acceleration=np.zeros(4)))
        ref, _, _ = oracle(W, T, start_v=v0, end_v=v1, end_a=np.zeros(4), start_rest=False, end_rest=False)
        scale = max(1.0, np.abs(ref).max())
        assert np.abs(ours.coeffs - ref).max() / scale < 1e-6

    def test_random_feasible_perturbations_never_lower_cost(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            W, T = _random_problem(rng, int(rng.integers(2, 5)))
            traj = min_snap(W, T)
            _, Q, systems = oracle(W, T)
            for d in range(3):
                c = traj.coeffs[:, d, :].ravel()
                A, b, N = systems[d]
                assert np.abs(A @ c - b).max() < 1e-7
                base = c @ Q @ c
                for _ in range(20):
                    cp = c + N @ rng.normal(scale=1e-2, size=N.shape[1])
                    assert cp @ Q @ cp >= base - 1e-9 * max(1.0, base)

    def test_snap_cost_matches_quadrature(self):
        W, T = _random_problem(np.random.default_rng(3), 3)
        traj = min_snap(W, T)
        _, Q, _ = oracle(W, T)
        ref = sum(traj.coeffs[:, d, :].ravel() @ Q @ traj.coeffs[:, d, :].ravel() for d in range(3))
        assert traj.snap_cost() == pytest.approx(ref, rel=1e-8)

    def test_interior_continuity(self):
        W, T = _random_problem(np.random.default_rng(5), 4)
        traj = min_snap(W, T)
        for i in range(3):
            seg_end = traj.coeffs[i]
            nxt = traj.coeffs[i + 1]
            for order in range(4):
                left = seg_end @ _drow(T[i], order)
                right = nxt @ _drow(0.0, order)
                assert np.allclose(left, right, atol=1e-7 * max(1.0, np.abs(left).max()))

    def test_finite_differences_over_random_trajectories(self):
        rng = np.random.default_rng(9)
        h = 1e-4
        for _ in range(100):
            W, _ = _random_problem(rng, int(rng.integers(1, 5)))
            traj = min_snap(W, allocate_times(W, 1.5, 3.0))
            for t in rng.uniform(h, traj.total_time - h, size=5):
                s0, sm, sp = traj.sample(t), traj.sample(t - h), traj.sample(t + h)
                assert np.allclose((sp.r - sm.r) / (2 * h), s0.v, atol=1e-3)
                assert np.allclose((sp.v - sm.v) / (2 * h), s0.a, atol=1e-3)

    def test_sample_clamps_to_rest(self):
        traj = min_snap([[0, 0, 1], [1, 2, 1], [3, 2, 1]], [1.0, 1.5])
        end = traj.sample(10.0)
        assert np.allclose(end.r, [3, 2, 1], atol=1e-12)
        assert np.allclose(end.v, 0.0) and np.allclose(end.a, 0.0)
        assert np.allclose(traj.sample(0.0).r, [0, 0, 1], atol=1e-12)

    def test_singular_inputs(self):
        with pytest.raises(SingularSystemError):
            min_snap([[0, 0, 1], [1, 0, 1]], [0.0])
        with pytest.raises(ValueError):
            min_snap([[0, 0, 1]], [])


class TestTimeAllocation:
    def test_trapezoid(self):
        assert allocate_times([[0, 0, 0], [2, 0, 0]], 1.5, 3.0)[0] == pytest.approx(0.5 + 2 / 1.5)

    def test_triangle(self):
        assert allocate_times([[0, 0, 0], [0.1, 0, 0]], 1.5, 3.0)[0] == pytest.approx(2 * math.sqrt(0.1 / 3))

    def test_limit_and_monotone(self):
        Ls = np.linspace(1e-6, 5, 500)
        T = [segment_time(L, 1.5, 3.0) for L in Ls]
        assert T[0] < 1e-2
        assert np.all(np.diff(T) > 0)

    def test_zero_length_rejected(self):
        with pytest.raises(SingularSystemError):
            allocate_times([[1, 1, 1], [1, 1, 1]], 1.5, 3.0)
        with pytest.raises(ValueError):
            allocate_times([[0, 0, 0], [1, 0, 0]], 0.0, 3.0)

    def test_profile_time_endpoints(self):
        for L in (0.1, 0.75, 4.0):
            T = segment_time(L, 1.5, 3.0)
            assert profile_time(0.0, L, 1.5, 3.0) == 0.0
            assert profile_time(L, L, 1.5, 3.0) == pytest.approx(T)
            s = np.linspace(0, L, 50)
            assert np.all(np.diff([profile_time(x, L, 1.5, 3.0) for x in s]) > 0)


class TestStraightRun:
    def test_stays_on_the_line(self):
        p0, p1 = np.array([0.0, 0, 1]), np.array([3.0, 4.0, 1])
        traj = straight_run(p0, p1, 0.0, math.atan2(4, 3), 3.0, 3.0, 0.5)
        u = (p1 - p0) / 5.0
        for t in np.linspace(0, traj.total_time, 200):
            d = traj.sample(t).r - p0
            assert np.linalg.norm(d - (d @ u) * u) < 1e-6

    def test_collide_speed_pinned_toward_target(self):
        p0, p1 = np.array([-2.0, 0, 1]), np.array([-0.45, -0.1, 1])
        centre = np.array([0.0, 0.0, 1.0])
        u = (centre - p1) / np.linalg.norm(centre - p1)
        traj = straight_run(p0, p1, 0.0, 0.0, 2.5, 3.0, 0.5, end_speed=2.5, end_dir=u)
        v_end = traj.evaluate(traj.total_time - 1e-12, 1)[:3]
        assert np.linalg.norm(v_end) == pytest.approx(2.5, abs=1e-6)
        assert np.allclose(v_end / np.linalg.norm(v_end), u, atol=1e-6)


class TestRecovery:
    def test_setpoint_example(self):
        assert np.allclose(recovery_setpoint([0, 0, 1], np.eye(3), 90.0), [-1.1, 0, 1], atol=1e-12)

    def test_zero_force(self):
        R = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
        assert np.allclose(recovery_setpoint([1, 1, 1], R, 0.0), [1, 0.8, 1], atol=1e-12)

    def test_experimental_recovery_point(self):
        r_n = recovery_setpoint([-0.42, 0.0, 1.0], np.eye(3), 63.0)
        assert np.allclose(r_n[:2], [-1.25, 0.0], atol=1e-9)

    def test_altitude_is_coerced(self):
        assert recovery_setpoint([0, 0, 1.3], np.eye(3), 10.0, altitude=1.0)[2] == 1.0

    def test_negative_force_rejected(self):
        with pytest.raises(ValueError):
            recovery_setpoint([0, 0, 1], np.eye(3), -1.0)

    def test_trajectory_endpoints(self):
        v_c = np.array([-1.6, 0.0, 0.0])
        traj = recovery_trajectory([0, 0, 1], v_c, np.eye(3), 90.0)
        assert np.allclose(traj.evaluate(0.0, 1)[:3], v_c, atol=1e-9)
        assert np.allclose(traj.evaluate(0.0)[:3], [0, 0, 1], atol=1e-9)
        T = traj.total_time - 1e-13
        assert np.allclose(traj.evaluate(T)[:3], [-1.1, 0, 1], atol=1e-9)
        assert np.allclose(traj.evaluate(T, 1), 0.0, atol=1e-9)
        assert np.allclose(traj.evaluate(T, 2), 0.0, atol=1e-9)

    def test_short_retreat_from_rest(self):
        traj = recovery_trajectory([0, 0, 1], np.zeros(3), np.eye(3), 0.0)
        assert np.allclose(traj.sample(traj.total_time).r, [-0.2, 0, 1], atol=1e-12)
        assert traj.total_time < 1.0
