"""Arm-length sensing, recursive filtering and contact-force estimation.

The range sensor measuring arm length is slow and coarse, so readings are
filtered with a first-order recursion and turned into a force through the
spring's Hooke law.  Collisions are declared on a force threshold for the
compliant robot, and on an acceleration threshold for the rigid one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .vehicle import ArmParams

IDLE = "idle"
IN_CONTACT = "in_contact"
AWAITING_RECOVERY = "awaiting_recovery"

COLLISION_DETECTED = "collision_detected"
HANDLING_START = "handling_start"


@dataclass(frozen=True)
class SensorModel:
    rate: float = 25.0
    precision: float = 0.001
    accuracy: float = 0.005
    w: float = 0.6

    def __post_init__(self):
        if not 0.0 < self.w <= 1.0:
            raise ValueError("filter weight w must lie in (0, 1]")
        if not self.rate > 0:
            raise ValueError("sensor rate must be positive")
        if self.precision < 0 or self.accuracy < 0:
            raise ValueError("precision and accuracy must be non-negative")


def quantize(x: float, step: float) -> float:
    if step <= 0:
        return x
    return round(x / step) * step


def sample_sensor(true_l: float, model: SensorModel, rng: np.random.Generator) -> float:
    """One noisy, quantized arm-length reading."""
    noise = rng.uniform(-model.accuracy, model.accuracy) if model.accuracy > 0 else 0.0
    return quantize(true_l + noise, model.precision)


def filter_update(l_hat_prev: float, h: float, w: float) -> float:
    if not 0.0 < w <= 1.0:
        raise ValueError("filter weight w must lie in (0, 1]")
    return w * h + (1.0 - w) * l_hat_prev


def estimate_force(l_hat: float, arm: ArmParams) -> float:
    """Spring force magnitude for a filtered arm length (clamped to the stroke)."""
    l_hat = min(max(l_hat, arm.l_min), arm.l_max)
    return arm.k_l * ((arm.l_max - l_hat) + arm.l_0)


def length_for_force(force: float, arm: ArmParams) -> float:
    """Arm length at which the preloaded spring holds ``force`` statically."""
    return min(max(arm.l_max + arm.l_0 - force / arm.k_l, arm.l_min), arm.l_max)


@dataclass(frozen=True)
class ForceEstimatorState:
    l_hat: float
    f_hat: float
    f_hat_max: float = 0.0
    phase: str = IDLE

    @classmethod
    def initial(cls, arm: ArmParams) -> "ForceEstimatorState":
        return cls(arm.l_max, estimate_force(arm.l_max, arm))


def detect_compliant(est: ForceEstimatorState,
                     f_threshold: float) -> tuple[ForceEstimatorState, Optional[str]]:
    """Advance the contact state machine after a new force estimate.

    ``handling_start`` leaves the machine in ``awaiting_recovery``; the
    consumer returns it to idle with :func:`acknowledge`.
    """
    if est.phase == IDLE:
        if est.f_hat >= f_threshold:
            return replace(est, phase=IN_CONTACT, f_hat_max=est.f_hat), COLLISION_DETECTED
        return est, None
    if est.phase == IN_CONTACT:
        peak = max(est.f_hat_max, est.f_hat)
        if est.f_hat < f_threshold:
            return replace(est, phase=AWAITING_RECOVERY, f_hat_max=peak), HANDLING_START
        return replace(est, f_hat_max=peak), None
    return est, None


def acknowledge(est: ForceEstimatorState) -> ForceEstimatorState:
    if est.phase != AWAITING_RECOVERY:
        raise ValueError(f"cannot acknowledge from phase {est.phase!r}")
    return replace(est, phase=IDLE)


def detect_rigid(a_inertial, g: float = 9.81) -> bool:
    """True when the gravity-compensated acceleration magnitude reaches 2 g."""
    a = np.asarray(a_inertial, dtype=float)
    return bool(math.sqrt(float(a @ a)) >= 2.0 * g)


class ArmSensorPipeline:
    """Sensor sampling, filtering and detection as seen by the flight computer.

    Readings arrive at ``model.rate`` starting at ``phase`` seconds; between
    readings the last estimate is held.
    """

    def __init__(self, arm: ArmParams, model: SensorModel, rng: np.random.Generator,
                 f_threshold: float = 25.0, phase: Optional[float] = None):
        if not f_threshold > arm.k_l * arm.l_0:
            raise ValueError("force threshold must exceed the preload force")
        self.arm = arm
        self.model = model
        self.rng = rng
        self.f_threshold = f_threshold
        self.period = 1.0 / model.rate
        self.next_sample = self.period * rng.uniform() if phase is None else phase
        self.state = ForceEstimatorState.initial(arm)
        self.last_reading = arm.l_max

    def update(self, t: float, true_l: float) -> list[str]:
        """Feed simulation time and the true arm length; returns new events."""
        events = []
        while t + 1e-12 >= self.next_sample:
            h = sample_sensor(true_l, self.model, self.rng)
            self.last_reading = h
            l_hat = filter_update(self.state.l_hat, h, self.model.w)
            self.state = replace(self.state, l_hat=l_hat, f_hat=estimate_force(l_hat, self.arm))
            self.state, event = detect_compliant(self.state, self.f_threshold)
            if event:
                events.append(event)
            self.next_sample += self.period
        return events

    def acknowledge(self) -> None:
        self.state = acknowledge(self.state)

    @property
    def f_hat(self) -> float:
        return self.state.f_hat


def static_estimate(force: float, arm: ArmParams, model: SensorModel, rng: np.random.Generator,
                    hold: float = 2.0, settle: float = 0.4) -> float:
    """Mean filtered estimate while ``force`` is held on the shield.

    The first ``settle`` seconds are discarded so the filter forgets its
    free-length initial value.
    """
    true_l = length_for_force(force, arm)
    l_hat = arm.l_max
    values = []
    n = int(round((settle + hold) * model.rate))
    for i in range(n):
        l_hat = filter_update(l_hat, sample_sensor(true_l, model, rng), model.w)
        if i >= settle * model.rate:
            values.append(estimate_force(l_hat, arm))
    return float(np.mean(values))
