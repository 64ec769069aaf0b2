"""Error-state tracking control: body-frame error computation, analytic
linearization of the error dynamics, and a finite-horizon MPC solved by
backward Riccati recursion around the reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Command, VehicleParams, VehicleState, clamp, wrap_angle
from .paths import ReferencePath, ReferenceSample, closest_point


class MpcSolveError(RuntimeError):
    """Numerical failure inside the Riccati recursion."""

    def __init__(self, step: int, reason: str):
        super().__init__(f"MPC recursion failed at horizon step {step}: {reason}")
        self.step = step


@dataclass(frozen=True)
class ErrorState:
    """Tracking error in the vehicle body frame.

    e1/e2 are the longitudinal/lateral position errors (e2 > 0 means the
    reference lies to the vehicle's left), e3 the wrapped heading error,
    e4 the speed error, all reference-minus-vehicle.
    """

    e1: float = 0.0
    e2: float = 0.0
    e3: float = 0.0
    e4: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "e1", float(self.e1))
        object.__setattr__(self, "e2", float(self.e2))
        object.__setattr__(self, "e3", wrap_angle(float(self.e3)))
        object.__setattr__(self, "e4", float(self.e4))

    def as_array(self) -> np.ndarray:
        return np.array([self.e1, self.e2, self.e3, self.e4])


@dataclass(frozen=True)
class ReferenceCommand:
    """Steady command associated with a reference sample."""

    steering_r: float
    throttle_r: float

    def __post_init__(self):
        if not (-1.0 <= self.steering_r <= 1.0 and 0.0 <= self.throttle_r <= 1.0):
            raise ValueError("reference command out of command ranges")

    def as_array(self) -> np.ndarray:
        return np.array([self.steering_r, self.throttle_r])


@dataclass(frozen=True)
class LinearizedDynamics:
    """One-step discrete error dynamics e+ = A e + B (u - u_r)."""

    A: np.ndarray
    B: np.ndarray


@dataclass
class MpcConfig:
    """Horizon, step, and quadratic weights of the tracking MPC."""

    horizon_N: int = 20
    dt: float = 0.1
    Q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 4.0, 2.0, 4.0]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.1, 0.01]))

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.horizon_N < 1:
            raise ValueError("horizon_N must be >= 1")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.Q.shape != (4, 4) or not np.allclose(self.Q, self.Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric 4x4")
        if np.min(np.linalg.eigvalsh(self.Q)) < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if self.R.shape != (2, 2) or not np.allclose(self.R, self.R.T, atol=1e-12):
            raise ValueError("R must be symmetric 2x2")
        try:
            np.linalg.cholesky(self.R)
        except np.linalg.LinAlgError as exc:
            raise ValueError("R must be positive definite") from exc


def error_state(q: VehicleState, q_r: ReferenceSample) -> ErrorState:
    """Body-frame tracking error of q relative to the reference sample."""
    dx = q_r.x - q.x
    dy = q_r.y - q.y
    c, s = math.cos(q.theta), math.sin(q.theta)
    return ErrorState(
        e1=c * dx + s * dy,
        e2=-s * dx + c * dy,
        e3=wrap_angle(q_r.theta - q.theta),
        e4=q_r.v - q.v,
    )


def reference_command(
    q_r: ReferenceSample, path_curvature: float, p: VehicleParams
) -> ReferenceCommand:
    """Steady command holding the vehicle on the reference.

    Steering inverts the bicycle turning-radius relation; the reference
    throttle is v_r / v_noload, a smooth stand-in since the non-negative
    torque map has no positive-throttle equilibrium below no-load speed.
    """
    if abs(path_curvature) * p.wheelbase_l >= math.tan(p.beta):
        raise ValueError(
            f"curvature {path_curvature:.4f} 1/m exceeds steerable range "
            f"(max {p.max_curvature:.4f})"
        )
    steering_r = math.atan(path_curvature * p.wheelbase_l) / p.beta
    throttle_r = clamp(q_r.v / p.speed_noload, 0.0, 1.0)
    return ReferenceCommand(steering_r, throttle_r)


def error_rate(
    e: ErrorState,
    u: Command,
    q_r: ReferenceSample,
    p: VehicleParams,
    ref_yaw_rate: float = 0.0,
    ref_accel: float = 0.0,
) -> np.ndarray:
    """Nonlinear time derivative of the error state.

    Serves as the ground truth that the analytic Jacobians in
    `linearize` are checked against.
    """
    v = q_r.v - e.e4
    omega = v * math.tan(p.beta * u.steering) / p.wheelbase_l
    accel = u.throttle * p.torque_stall * max(0.0, 1.0 - v / p.speed_noload) * p.accel_gain
    return np.array(
        [
            omega * e.e2 + q_r.v * math.cos(e.e3) - v,
            -omega * e.e1 + q_r.v * math.sin(e.e3),
            ref_yaw_rate - omega,
            ref_accel - accel,
        ]
    )


def linearize(
    e: ErrorState,
    u_bar: Command,
    q_r: ReferenceSample,
    dt: float,
    p: VehicleParams,
) -> LinearizedDynamics:
    """Discrete error dynamics A = I + dt dF/de, B = dt dF/du at the
    operating point (e, u_bar, q_r)."""
    v = q_r.v - e.e4
    tb = math.tan(p.beta * u_bar.steering)
    g = tb / p.wheelbase_l  # d(omega)/dv
    omega = v * g
    # d(omega)/d(steering)
    dw_dd = v * p.beta * (1.0 + tb * tb) / p.wheelbase_l
    in_band = 0.0 < 1.0 - v / p.speed_noload
    da_dv = (
        -u_bar.throttle * p.torque_stall * p.accel_gain / p.speed_noload
        if in_band
        else 0.0
    )
    da_dalpha = (
        p.torque_stall * max(0.0, 1.0 - v / p.speed_noload) * p.accel_gain
    )

    ac = np.array(
        [
            [0.0, omega, -q_r.v * math.sin(e.e3), 1.0 - e.e2 * g],
            [-omega, 0.0, q_r.v * math.cos(e.e3), e.e1 * g],
            [0.0, 0.0, 0.0, g],
            [0.0, 0.0, 0.0, da_dv],
        ]
    )
    bc = np.array(
        [
            [e.e2 * dw_dd, 0.0],
            [-e.e1 * dw_dd, 0.0],
            [-dw_dd, 0.0],
            [0.0, -da_dalpha],
        ]
    )
    return LinearizedDynamics(A=np.eye(4) + dt * ac, B=dt * bc)


def window_curvatures(refs: list[ReferenceSample]) -> list[float]:
    """Per-sample curvature estimated from consecutive window samples.

    Uses chord distances so wrapped arc lengths on closed paths need no
    special casing; repeated (clamped) samples inherit the last value.
    """
    n = len(refs)
    out = [0.0] * n
    last = 0.0
    for k in range(n - 1):
        dsx = refs[k + 1].x - refs[k].x
        dsy = refs[k + 1].y - refs[k].y
        chord = math.hypot(dsx, dsy)
        if chord > 1e-9:
            last = wrap_angle(refs[k + 1].theta - refs[k].theta) / chord
        out[k] = last
    out[n - 1] = last if n > 1 else 0.0
    return out


@dataclass(frozen=True)
class MpcSolution:
    command: Command
    predicted_errors: np.ndarray  # (N+1, 4)
    cost: float
    u_deviations: np.ndarray  # (N, 2), pre-clamp optimal u - u_r
    reference_commands: np.ndarray  # (N, 2)
    dynamics: tuple[LinearizedDynamics, ...]


def horizon_cost(
    e0: np.ndarray,
    dynamics: list[LinearizedDynamics] | tuple[LinearizedDynamics, ...],
    u_dev: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Roll the linear error dynamics forward and evaluate the quadratic
    objective for a given input-deviation sequence."""
    n = len(dynamics)
    errors = np.empty((n + 1, 4))
    errors[0] = e0
    cost = 0.0
    for k in range(n):
        ek = errors[k]
        uk = u_dev[k]
        cost += float(ek @ Q @ ek + uk @ R @ uk)
        errors[k + 1] = dynamics[k].A @ ek + dynamics[k].B @ uk
    cost += float(errors[n] @ Q @ errors[n])
    return errors, cost


def mpc_solve(
    e0: ErrorState,
    refs: list[ReferenceSample],
    config: MpcConfig,
    p: VehicleParams,
    curvatures: list[float] | None = None,
) -> MpcSolution:
    """Finite-horizon tracking solve: backward Riccati recursion over the
    error dynamics re-linearized at the reference of each horizon step.

    The first command is the reference command plus the optimal deviation,
    clamped to command bounds afterwards.
    """
    n = config.horizon_N
    if len(refs) != n:
        raise ValueError(f"expected {n} reference samples, got {len(refs)}")
    if curvatures is None:
        curvatures = window_curvatures(refs)

    zero = ErrorState()
    u_refs = np.empty((n, 2))
    dyn: list[LinearizedDynamics] = []
    for k in range(n):
        ur = reference_command(refs[k], curvatures[k], p)
        u_refs[k] = (ur.steering_r, ur.throttle_r)
        dyn.append(
            linearize(zero, Command(ur.steering_r, ur.throttle_r), refs[k], config.dt, p)
        )

    gains = [np.zeros((2, 4))] * n
    pmat = config.Q.copy()
    for k in range(n - 1, -1, -1):
        a, b = dyn[k].A, dyn[k].B
        s = config.R + b.T @ pmat @ b
        try:
            gain = np.linalg.solve(s, b.T @ pmat @ a)
        except np.linalg.LinAlgError as exc:
            raise MpcSolveError(k, str(exc)) from exc
        pmat = config.Q + a.T @ pmat @ a - gain.T @ s @ gain
        pmat = 0.5 * (pmat + pmat.T)
        if not np.all(np.isfinite(pmat)):
            raise MpcSolveError(k, "non-finite Riccati iterate")
        gains[k] = gain

    e = e0.as_array()
    u_dev = np.empty((n, 2))
    ek = e
    for k in range(n):
        u_dev[k] = -gains[k] @ ek
        ek = dyn[k].A @ ek + dyn[k].B @ u_dev[k]
    errors, cost = horizon_cost(e, dyn, u_dev, config.Q, config.R)

    command = Command(
        steering=u_refs[0, 0] + u_dev[0, 0],
        throttle=u_refs[0, 1] + u_dev[0, 1],
    )
    return MpcSolution(
        command=command,
        predicted_errors=errors,
        cost=cost,
        u_deviations=u_dev,
        reference_commands=u_refs,
        dynamics=tuple(dyn),
    )


class MpcController:
    """Closed-loop MPC path tracker with warm-started closest-point search.

    One instance owns one vehicle: the cached path index makes repeated
    queries cheap and is the only mutable state.
    """

    def __init__(self, path: ReferencePath, config: MpcConfig, params: VehicleParams):
        self.path = path
        self.config = config
        self.params = params
        self._hint: int | None = None

    def reset(self) -> None:
        self._hint = None

    def command(self, q: VehicleState) -> tuple[Command, dict]:
        idx, _, dist = closest_point(self.path, (q.x, q.y), hint_index=self._hint)
        self._hint = idx
        idxs = self.path.window_indices(idx, self.config.horizon_N, self.config.dt)
        refs = [self.path.sample(i) for i in idxs]
        curvatures = [self.path.curvature(i) for i in idxs]
        e0 = error_state(q, refs[0])
        sol = mpc_solve(e0, refs, self.config, self.params, curvatures)
        diag = {
            "e0": e0,
            "ref_index": idx,
            "closest_distance": dist,
            "cost": sol.cost,
            "predicted_errors": sol.predicted_errors,
        }
        return sol.command, diag
