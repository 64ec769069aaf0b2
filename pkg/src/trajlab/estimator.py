"""Extended Kalman filter over the 4-DOF model.

Position and heading arrive as separate sequential updates; the filter's
main job is recovering the unmeasured longitudinal speed through the
process model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    Command,
    VehicleParams,
    VehicleState,
    derivatives,
    step,
    wrap_angle,
)


@dataclass(frozen=True)
class NoiseConfig:
    """Process noise (continuous, scaled by dt) and measurement noises."""

    process: np.ndarray = field(
        default_factory=lambda: np.diag([1e-4, 1e-4, 1e-4, 1e-2])
    )
    position: np.ndarray = field(default_factory=lambda: np.diag([0.02**2, 0.02**2]))
    heading_var: float = 0.01**2

    def __post_init__(self):
        object.__setattr__(self, "process", np.asarray(self.process, dtype=float))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        for name, mat in (("process", self.process), ("position", self.position)):
            if not np.allclose(mat, mat.T, atol=1e-12):
                raise ValueError(f"{name} noise must be symmetric")
            if np.min(np.linalg.eigvalsh(mat)) < -1e-12:
                raise ValueError(f"{name} noise must be positive semidefinite")
        if self.heading_var < 0.0:
            raise ValueError("heading variance must be non-negative")


@dataclass(frozen=True)
class EkfState:
    mean: VehicleState
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "covariance", np.asarray(self.covariance, dtype=float)
        )

    def check_valid(self, eig_floor: float = -1e-9) -> None:
        p = self.covariance
        if not np.allclose(p, p.T, atol=1e-12):
            raise AssertionError("covariance lost symmetry")
        if float(np.min(np.linalg.eigvalsh(p))) < eig_floor:
            raise AssertionError("covariance lost positive semidefiniteness")


def continuous_jacobian(q: VehicleState, u: Command, p: VehicleParams) -> np.ndarray:
    """d(qdot)/dq of the 4-DOF model at (q, u)."""
    tb = math.tan(p.beta * u.steering)
    in_band = q.v < p.speed_noload
    dvdot_dv = (
        -u.throttle * p.torque_stall * p.accel_gain / p.speed_noload if in_band else 0.0
    )
    return np.array(
        [
            [0.0, 0.0, -q.v * math.sin(q.theta), math.cos(q.theta)],
            [0.0, 0.0, q.v * math.cos(q.theta), math.sin(q.theta)],
            [0.0, 0.0, 0.0, tb / p.wheelbase_l],
            [0.0, 0.0, 0.0, dvdot_dv],
        ]
    )


def step_jacobian(
    q: VehicleState, u: Command, dt: float, p: VehicleParams
) -> np.ndarray:
    """Exact Jacobian of the discrete RK4 step, chained through its stages."""
    eye = np.eye(4)

    def deriv(state: VehicleState):
        return np.array(derivatives(state, u, p))

    k1 = deriv(q)
    j1 = continuous_jacobian(q, u, p)
    q2 = VehicleState(q.x + 0.5 * dt * k1[0], q.y + 0.5 * dt * k1[1],
                      q.theta + 0.5 * dt * k1[2], q.v + 0.5 * dt * k1[3])
    k2 = deriv(q2)
    j2 = continuous_jacobian(q2, u, p) @ (eye + 0.5 * dt * j1)
    q3 = VehicleState(q.x + 0.5 * dt * k2[0], q.y + 0.5 * dt * k2[1],
                      q.theta + 0.5 * dt * k2[2], q.v + 0.5 * dt * k2[3])
    j3 = continuous_jacobian(q3, u, p) @ (eye + 0.5 * dt * j2)
    k3 = deriv(q3)
    q4 = VehicleState(q.x + dt * k3[0], q.y + dt * k3[1],
                      q.theta + dt * k3[2], q.v + dt * k3[3])
    j4 = continuous_jacobian(q4, u, p) @ (eye + dt * j3)
    return eye + (dt / 6.0) * (j1 + 2.0 * j2 + 2.0 * j3 + j4)


def ekf_predict(
    s: EkfState, u: Command, dt: float, p: VehicleParams, n: NoiseConfig
) -> EkfState:
    """Propagate mean through the plant model and covariance through its
    analytic Jacobian."""
    if not (0.0 < dt <= 0.1):
        raise ValueError(f"dt must be in (0, 0.1], got {dt}")
    mean = step(s.mean, u, dt, p)
    f = step_jacobian(s.mean, u, dt, p)
    cov = f @ s.covariance @ f.T + n.process * dt
    cov = 0.5 * (cov + cov.T)
    return EkfState(mean=mean, covariance=cov)


def _joseph_update(
    s: EkfState, h: np.ndarray, innovation: np.ndarray, r: np.ndarray
) -> EkfState:
    p = s.covariance
    sm = h @ p @ h.T + r
    gain = np.linalg.solve(sm.T, (p @ h.T).T).T
    delta = gain @ innovation
    mean = VehicleState(
        s.mean.x + delta[0],
        s.mean.y + delta[1],
        wrap_angle(s.mean.theta + delta[2]),
        s.mean.v + delta[3],
    )
    ikh = np.eye(4) - gain @ h
    cov = ikh @ p @ ikh.T + gain @ r @ gain.T
    cov = 0.5 * (cov + cov.T)
    return EkfState(mean=mean, covariance=cov)


def ekf_update_position(
    s: EkfState, meas: tuple[float, float], n: NoiseConfig
) -> EkfState:
    """Measurement update with (x, y)."""
    z = np.asarray(meas, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("position measurement must be finite")
    h = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    innovation = z - np.array([s.mean.x, s.mean.y])
    return _joseph_update(s, h, innovation, n.position)


def ekf_update_heading(s: EkfState, meas: float, n: NoiseConfig) -> EkfState:
    """Measurement update with heading; the innovation is wrapped before
    the gain is applied."""
    if not math.isfinite(meas):
        raise ValueError("heading measurement must be finite")
    h = np.array([[0.0, 0.0, 1.0, 0.0]])
    innovation = np.array([wrap_angle(meas - s.mean.theta)])
    return _joseph_update(s, h, innovation, np.array([[n.heading_var]]))
