"""Minimum-snap piecewise polynomials, time allocation and recovery references.

Each segment is a degree-7 polynomial per flat output (x, y, z, yaw).  The
solver assembles the equality-constrained quadratic program over all segment
coefficients in normalized time and solves its KKT system directly.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .control import FlatSetpoint

DEGREE = 7
NCOEF = DEGREE + 1
SNAP = 4


class SingularSystemError(ValueError):
    """The trajectory problem is ill-posed (repeated waypoints, zero durations)."""


@dataclass(frozen=True)
class BoundaryCondition:
    """Pinned derivatives at a trajectory end; ``None`` leaves one free."""

    velocity: Optional[Sequence[float]] = None
    acceleration: Optional[Sequence[float]] = None
    jerk: Optional[Sequence[float]] = None

    @classmethod
    def rest(cls, dims: int = 4) -> "BoundaryCondition":
        z = tuple([0.0] * dims)
        return cls(z, z, z)

    def pins(self) -> list[tuple[int, np.ndarray]]:
        out = []
        for order, val in ((1, self.velocity), (2, self.acceleration), (3, self.jerk)):
            if val is not None:
                arr = np.asarray(val, dtype=float)
                if not np.all(np.isfinite(arr)):
                    raise ValueError("pinned boundary values must be finite")
                out.append((order, arr))
        return out


@dataclass(frozen=True)
class PolynomialTrajectory:
    """Piecewise polynomial with physical-time coefficients, ascending powers.

    ``coeffs[i, d, k]`` multiplies ``t**k`` on segment ``i`` for output ``d``,
    with ``t`` measured from the segment start.
    """

    durations: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        if np.any(self.durations <= 0):
            raise ValueError("segment durations must be positive")
        object.__setattr__(self, "_starts", np.concatenate(([0.0], np.cumsum(self.durations))))
        k = np.arange(NCOEF, dtype=float)
        d1 = self.coeffs[:, :, 1:] * k[1:]
        d2 = d1[:, :, 1:] * k[1:-1]
        d3 = d2[:, :, 1:] * k[1:-2]
        object.__setattr__(self, "_derivs", (self.coeffs, d1, d2, d3))

    @property
    def total_time(self) -> float:
        return float(self._starts[-1])

    @property
    def n_segments(self) -> int:
        return len(self.durations)

    def _locate(self, t: float) -> tuple[int, float]:
        t = min(max(t, 0.0), self.total_time)
        i = min(bisect.bisect_right(self._starts, t) - 1, self.n_segments - 1)
        return i, t - self._starts[i]

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        """``order``-th derivative of all outputs at time ``t`` (clamped)."""
        if t > self.total_time and order > 0:
            return np.zeros(self.coeffs.shape[1])
        i, tau = self._locate(t)
        c = self._derivs[order][i]
        powers = tau ** np.arange(c.shape[1])
        return c @ powers

    def sample(self, t: float) -> FlatSetpoint:
        i, tau = self._locate(t)
        p = tau ** np.arange(NCOEF)
        pos = self._derivs[0][i] @ p
        if t >= self.total_time:
            return FlatSetpoint(pos[:3], np.zeros(3), np.zeros(3), float(pos[3]))
        vel = self._derivs[1][i] @ p[:-1]
        acc = self._derivs[2][i] @ p[:-2]
        return FlatSetpoint(pos[:3], vel[:3], acc[:3], float(pos[3]))

    def waypoints(self) -> np.ndarray:
        return np.array([self.evaluate(s) for s in self._starts])

    def snap_cost(self) -> float:
        """Integral of squared snap summed over the position outputs."""
        total = 0.0
        for T, c in zip(self.durations, self.coeffs):
            Q = _snap_hessian_physical(float(T))
            for d in range(3):
                total += float(c[d] @ Q @ c[d])
        return total

    def grid(self, rate: float = 100.0) -> np.ndarray:
        """Rows ``t, x, y, z, yaw, vx, vy, vz, ax, ay, az`` sampled at ``rate``."""
        ts = np.arange(0.0, self.total_time + 0.5 / rate, 1.0 / rate)
        rows = []
        for t in ts:
            sp = self.sample(min(t, self.total_time))
            rows.append([t, *sp.r, sp.yaw, *sp.v, *sp.a])
        return np.array(rows)


@lru_cache(maxsize=None)
def _snap_hessian_unit() -> np.ndarray:
    """Hessian of the snap integral over tau in [0, 1]."""
    Q = np.zeros((NCOEF, NCOEF))
    for i in range(SNAP, NCOEF):
        for j in range(SNAP, NCOEF):
            fi = math.factorial(i) / math.factorial(i - SNAP)
            fj = math.factorial(j) / math.factorial(j - SNAP)
            Q[i, j] = fi * fj / (i + j - 2 * SNAP + 1)
    return Q


def _snap_hessian_physical(T: float) -> np.ndarray:
    Q = np.zeros((NCOEF, NCOEF))
    for i in range(SNAP, NCOEF):
        for j in range(SNAP, NCOEF):
            fi = math.factorial(i) / math.factorial(i - SNAP)
            fj = math.factorial(j) / math.factorial(j - SNAP)
            p = i + j - 2 * SNAP + 1
            Q[i, j] = fi * fj * T ** p / p
    return Q


@lru_cache(maxsize=None)
def _derivative_row(order: int, at_end: bool) -> np.ndarray:
    """Row mapping normalized coefficients to the ``order``-th tau-derivative."""
    row = np.zeros(NCOEF)
    for k in range(order, NCOEF):
        tau_pow = 1.0 if at_end else (1.0 if k == order else 0.0)
        row[k] = math.factorial(k) / math.factorial(k - order) * tau_pow
    return row


def min_snap(waypoints, durations, start: Optional[BoundaryCondition] = None,
             end: Optional[BoundaryCondition] = None) -> PolynomialTrajectory:
    """Minimum-snap trajectory through ``waypoints`` (N x D, D = 3 or 4).

    Positions are interpolated exactly; position, velocity, acceleration and
    jerk are continuous at interior joints; interior derivatives are free.
    ``start``/``end`` default to rest.  A 3-column input gets a zero yaw.
    """
    W = np.asarray(waypoints, dtype=float)
    if W.ndim != 2 or len(W) < 2:
        raise ValueError("need at least two waypoints")
    if W.shape[1] == 3:
        W = np.column_stack((W, np.zeros(len(W))))
    dims = W.shape[1]
    T = np.asarray(durations, dtype=float)
    m = len(W) - 1
    if T.shape != (m,):
        raise ValueError(f"expected {m} durations, got {T.shape}")
    if not np.all(np.isfinite(T)) or np.any(T <= 1e-9):
        raise SingularSystemError("segment durations must be positive")
    start = BoundaryCondition.rest(dims) if start is None else start
    end = BoundaryCondition.rest(dims) if end is None else end

    n = NCOEF * m
    rows: list[np.ndarray] = []
    rhs: list[np.ndarray] = []

    def add(coeff_row: np.ndarray, value: np.ndarray):
        rows.append(coeff_row)
        rhs.append(value)

    for i in range(m):
        r0 = np.zeros(n)
        r0[NCOEF * i:NCOEF * (i + 1)] = _derivative_row(0, False)
        add(r0, W[i])
        r1 = np.zeros(n)
        r1[NCOEF * i:NCOEF * (i + 1)] = _derivative_row(0, True)
        add(r1, W[i + 1])
    zero = np.zeros(dims)
    for i in range(m - 1):
        scale = 0.5 * (T[i] + T[i + 1])
        for order in range(1, SNAP):
            r = np.zeros(n)
            r[NCOEF * i:NCOEF * (i + 1)] = _derivative_row(order, True) * (scale / T[i]) ** order
            r[NCOEF * (i + 1):NCOEF * (i + 2)] = -_derivative_row(order, False) * (scale / T[i + 1]) ** order
            add(r, zero)
    def padded(val):
        return np.concatenate((val, np.zeros(dims - len(val)))) if len(val) < dims else val

    for order, val in start.pins():
        val = padded(val)
        r = np.zeros(n)
        r[:NCOEF] = _derivative_row(order, False)
        add(r, val * T[0] ** order)
    for order, val in end.pins():
        val = padded(val)
        r = np.zeros(n)
        r[NCOEF * (m - 1):] = _derivative_row(order, True)
        add(r, val * T[-1] ** order)

    A = np.array(rows)
    b = np.array(rhs)
    H = np.zeros((n, n))
    Q1 = _snap_hessian_unit()
    t_ref = float(T.min())
    for i in range(m):
        H[NCOEF * i:NCOEF * (i + 1), NCOEF * i:NCOEF * (i + 1)] = Q1 * (t_ref / T[i]) ** 7
    nc = len(A)
    K = np.zeros((n + nc, n + nc))
    K[:n, :n] = 2.0 * H
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs_full = np.zeros((n + nc, dims))
    rhs_full[n:] = b
    try:
        sol = np.linalg.solve(K, rhs_full)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("non-finite solution")
    ctil = sol[:n].reshape(m, NCOEF, dims).transpose(0, 2, 1)
    powers = np.arange(NCOEF)
    coeffs = ctil / (T[:, None, None] ** powers[None, None, :])
    return PolynomialTrajectory(T.copy(), coeffs)


def segment_time(length: float, v_max: float, a_max: float) -> float:
    """Rest-to-rest trapezoidal (or triangular) profile duration."""
    if length >= v_max * v_max / a_max:
        return v_max / a_max + length / v_max
    return 2.0 * math.sqrt(length / a_max)


def arrival_time(length: float, speed: float, a_max: float) -> float:
    """Duration to cover ``length`` from rest, arriving at ``speed``."""
    if length >= speed * speed / (2.0 * a_max):
        return speed / a_max + (length - speed * speed / (2.0 * a_max)) / speed
    return 2.0 * length / speed


def profile_time(s: float, length: float, v_max: float, a_max: float, end_speed: float = 0.0) -> float:
    """Time at which the trapezoidal profile used by ``allocate_times`` has covered ``s``."""
    s = min(max(s, 0.0), length)
    if end_speed > 0:
        d_a = end_speed * end_speed / (2.0 * a_max)
        if length < d_a:
            return math.sqrt(2.0 * s * 2.0 * length / (end_speed * end_speed))
        if s <= d_a:
            return math.sqrt(2.0 * s / a_max)
        return end_speed / a_max + (s - d_a) / end_speed
    T = segment_time(length, v_max, a_max)
    if length >= v_max * v_max / a_max:
        d_a = v_max * v_max / (2.0 * a_max)
        if s <= d_a:
            return math.sqrt(2.0 * s / a_max)
        if s <= length - d_a:
            return v_max / a_max + (s - d_a) / v_max
    elif s <= 0.5 * length:
        return math.sqrt(2.0 * s / a_max)
    return T - math.sqrt(2.0 * (length - s) / a_max)


def concatenate(parts: Sequence[PolynomialTrajectory]) -> PolynomialTrajectory:
    """Play trajectories back to back (the caller ensures continuity)."""
    return PolynomialTrajectory(np.concatenate([p.durations for p in parts]),
                                np.concatenate([p.coeffs for p in parts]))


def straight_run(p0, p1, yaw0: float, yaw1: float, v_max: float, a_max: float, piece: float,
                 start: Optional[BoundaryCondition] = None, end_speed: float = 0.0,
                 end_dir: Optional[np.ndarray] = None) -> PolynomialTrajectory:
    """Straight flight from ``p0`` to ``p1`` through evenly spaced collinear knots.

    Knot times follow the trapezoidal profile, so the polynomial reproduces it
    closely; with rest (or along-track) boundary values the path stays on the
    line.  The heading turns from ``yaw0`` to ``yaw1`` over the first piece.
    A positive ``end_speed`` arrives moving along ``end_dir`` (default: the run).
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    L = float(np.linalg.norm(p1 - p0))
    if L <= 1e-9:
        raise SingularSystemError("zero-length run")
    k = max(1, int(math.ceil(L / piece - 1e-9)))
    knots = [profile_time(L * j / k, L, v_max, a_max, end_speed) for j in range(k + 1)]
    T = np.diff(knots)
    pts = [p0 + (p1 - p0) * (j / k) for j in range(k + 1)]
    yaws = unwrap_yaw([yaw0] + [yaw1] * k)
    W = np.column_stack((np.array(pts), yaws))
    u = (p1 - p0) / L if end_dir is None else np.asarray(end_dir, dtype=float)
    if end_speed > 0:
        end = BoundaryCondition(velocity=np.append(u * end_speed, 0.0), acceleration=np.zeros(4))
    else:
        end = BoundaryCondition.rest(4)
    return min_snap(W, T, start, end)


def allocate_times(waypoints, v_max: float, a_max: float, end_speed: float = 0.0) -> np.ndarray:
    """Per-segment durations from a trapezoidal velocity profile.

    Only the first three columns (position) count towards segment length.  A
    positive ``end_speed`` times the last segment as an arrival at that speed.
    """
    if not (v_max > 0 and a_max > 0):
        raise ValueError("v_max and a_max must be positive")
    W = np.asarray(waypoints, dtype=float)
    P = W[:, :3] if W.shape[1] >= 3 else W
    lengths = np.linalg.norm(np.diff(P, axis=0), axis=1)
    if np.any(lengths <= 1e-9):
        raise SingularSystemError("zero-length segment")
    times = np.array([segment_time(L, v_max, a_max) for L in lengths])
    if end_speed > 0:
        times[-1] = arrival_time(lengths[-1], end_speed, a_max)
    return times


@dataclass(frozen=True)
class RecoveryParams:
    eta: float = 0.01
    d0: float = 0.2
    v_max: float = 2.0
    a_max: float = 6.0


def recovery_setpoint(r_c, R_c, f_max: float, eta: float = 0.01, d0: float = 0.2,
                      altitude: Optional[float] = None) -> np.ndarray:
    """Stabilization point behind the collision point, proportional to the peak force."""
    if f_max < 0:
        raise ValueError("f_max must be non-negative")
    r_c = np.asarray(r_c, dtype=float)
    r_n = r_c - (eta * f_max + d0) * np.asarray(R_c)[:, 0]
    r_n[2] = r_c[2] if altitude is None else altitude
    return r_n


def recovery_trajectory(r_c, v_c, R_c, f_max: float, limits: RecoveryParams = RecoveryParams(),
                        altitude: Optional[float] = None, yaw: float = 0.0) -> PolynomialTrajectory:
    """Single segment from the current state to rest at the recovery setpoint."""
    r_c = np.asarray(r_c, dtype=float)
    r_n = recovery_setpoint(r_c, R_c, f_max, limits.eta, limits.d0, altitude)
    T = allocate_times([r_c, r_n], limits.v_max, limits.a_max)
    v0 = np.append(np.asarray(v_c, dtype=float), 0.0)
    start = BoundaryCondition(velocity=v0)
    end = BoundaryCondition(velocity=np.zeros(4), acceleration=np.zeros(4))
    return min_snap([[*r_c, yaw], [*r_n, yaw]], T, start, end)


def unwrap_yaw(yaws: Sequence[float]) -> np.ndarray:
    return np.unwrap(np.asarray(yaws, dtype=float))


def tangent_yaws(points: np.ndarray, initial: Optional[float] = None) -> np.ndarray:
    """Bearing of each outgoing segment (last point keeps the incoming one), unwrapped."""
    P = np.asarray(points, dtype=float)
    d = np.diff(P[:, :2], axis=0)
    bearings = np.arctan2(d[:, 1], d[:, 0])
    yaws = np.append(bearings, bearings[-1])
    if initial is not None:
        yaws[0] = initial
    return unwrap_yaw(yaws)
