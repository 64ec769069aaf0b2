"""4-DOF vehicle model: kinematic bicycle plus a one-parameter-pair powertrain.

State is q = [x, y, theta, v]; commands are steering in [-1, 1] and
throttle in [0, 1]. The same model serves as simulation plant, MPC
prediction model, and EKF process model, so everything here is pure and
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.fmod(a + math.pi, TWO_PI)
    if r <= 0.0:
        r += TWO_PI
    return r - math.pi


def clamp(value: float, lo: float, hi: float) -> float:
    return lo if value < lo else hi if value > hi else value


@dataclass(frozen=True)
class VehicleState:
    """Planar pose plus longitudinal speed.

    theta is kept in (-pi, pi]; v is non-negative (the model has no
    reverse gear).
    """

    x: float = 0.0  # east position, m
    y: float = 0.0  # north position, m
    theta: float = 0.0  # heading, rad
    v: float = 0.0  # longitudinal speed, m/s

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "v", max(0.0, float(self.v)))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.theta, self.v)


@dataclass(frozen=True)
class Command:
    """Steering in [-1, 1] and throttle in [0, 1], clamped at construction."""

    steering: float = 0.0
    throttle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "steering", clamp(float(self.steering), -1.0, 1.0))
        object.__setattr__(self, "throttle", clamp(float(self.throttle), 0.0, 1.0))


@dataclass(frozen=True)
class VehicleParams:
    """Physical parameters of the 4-DOF model.

    The defaults are scaled so full throttle reaches 2 m/s from rest in
    about 3 s and both 1 and 2 m/s operating speeds are attainable.
    """

    beta: float = 0.4  # steering command -> wheel angle gain, rad
    wheelbase_l: float = 0.5  # m
    gear_ratio_gamma: float = 5.0
    wheel_radius_Rw: float = 0.08  # m
    wheel_inertia_Iw: float = 0.15  # kg m^2
    torque_stall: float = 0.5  # N m at full throttle, v = 0
    speed_noload: float = 2.5  # m/s where motor torque reaches 0

    def __post_init__(self):
        for name in (
            "beta",
            "wheelbase_l",
            "gear_ratio_gamma",
            "wheel_radius_Rw",
            "wheel_inertia_Iw",
            "torque_stall",
            "speed_noload",
        ):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.beta >= math.pi / 2:
            raise ValueError("beta must keep full-lock wheel angle below pi/2")

    @property
    def accel_gain(self) -> float:
        """gamma * R_w / I_w, torque-to-acceleration factor."""
        return self.gear_ratio_gamma * self.wheel_radius_Rw / self.wheel_inertia_Iw

    @property
    def max_curvature(self) -> float:
        """Tightest steerable curvature, 1/m."""
        return math.tan(self.beta) / self.wheelbase_l


def torque(alpha: float, v: float, p: VehicleParams) -> float:
    """Motor torque from the affine map alpha * T_stall * (1 - v/v_noload).

    Clamped non-negative: the motor never brakes, so the model can only
    decelerate by letting torque go to zero.
    """
    return alpha * p.torque_stall * max(0.0, 1.0 - v / p.speed_noload)


def derivatives(
    q: VehicleState, u: Command, p: VehicleParams
) -> tuple[float, float, float, float]:
    """Continuous-time state derivative [xdot, ydot, thetadot, vdot]."""
    return _derivatives_raw(q.theta, q.v, u.steering, u.throttle, p)


def _derivatives_raw(
    theta: float, v: float, steering: float, throttle: float, p: VehicleParams
) -> tuple[float, float, float, float]:
    return (
        v * math.cos(theta),
        v * math.sin(theta),
        v * math.tan(p.beta * steering) / p.wheelbase_l,
        torque(throttle, v, p) * p.accel_gain,
    )


MAX_STEP_DT = 0.1


def step(q: VehicleState, u: Command, dt: float, p: VehicleParams) -> VehicleState:
    """Advance the state by one RK4 step with the command held constant.

    dt must lie in (0, 0.1]; larger steps should be taken as substeps.
    """
    if not (0.0 < dt <= MAX_STEP_DT):
        raise ValueError(f"dt must be in (0, {MAX_STEP_DT}], got {dt}")

    x, y, th, v = q.x, q.y, q.theta, q.v
    d, a = u.steering, u.throttle

    k1 = _derivatives_raw(th, v, d, a, p)
    k2 = _derivatives_raw(th + 0.5 * dt * k1[2], v + 0.5 * dt * k1[3], d, a, p)
    k3 = _derivatives_raw(th + 0.5 * dt * k2[2], v + 0.5 * dt * k2[3], d, a, p)
    k4 = _derivatives_raw(th + dt * k3[2], v + dt * k3[3], d, a, p)

    sixth = dt / 6.0
    return VehicleState(
        x + sixth * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0]),
        y + sixth * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1]),
        wrap_angle(th + sixth * (k1[2] + 2.0 * (k2[2] + k3[2]) + k4[2])),
        max(0.0, v + sixth * (k1[3] + 2.0 * (k2[3] + k3[3]) + k4[3])),
    )
