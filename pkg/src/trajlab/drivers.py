"""Scripted human-like driver.

Used to synthesize the shipped HIL fixture recordings. The law is a
gentle proportional correction plus curvature anticipation: low gains
give the smooth steering and slow merge-back a relaxed human produces,
in contrast to the MPC's sharp corrections. The law is kept memoryless
on purpose; a heavily lagged teacher emits commands that depend on
hidden filter state, which a state-free clone cannot fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .control import error_state
from .dynamics import Command, VehicleParams, VehicleState, clamp
from .paths import ReferencePath, closest_point
from .imitation import (
    Dataset,
    PerturbationSpec,
    collect_closed_loop,
)


@dataclass(frozen=True)
class DriverStyle:
    """Gains and smoothing of the scripted driver."""

    lateral_gain: float = 0.5  # steering per m of lateral error
    heading_gain: float = 1.2  # steering per rad of heading error
    speed_gain: float = 0.8  # throttle per m/s of speed error
    throttle_laziness: float = 0.85  # fraction of the feed-forward throttle used
    steer_tau: float = 0.0  # optional steering smoothing time constant, s
    throttle_tau: float = 0.0  # optional throttle smoothing time constant, s


class SmoothDriver:
    """Closed-loop controller with gentle, human-ish corrections."""

    def __init__(
        self,
        path: ReferencePath,
        params: VehicleParams,
        style: DriverStyle | None = None,
        dt: float = 0.1,
    ):
        self.path = path
        self.params = params
        self.style = style or DriverStyle()
        self.dt = dt
        self._hint: int | None = None
        self._steering = 0.0
        self._throttle = 0.0

    def reset(self) -> None:
        self._hint = None
        self._steering = 0.0
        self._throttle = 0.0

    def _blend(self, current: float, target: float, tau: float) -> float:
        if tau <= 0.0:
            return target
        return current + (target - current) * min(1.0, self.dt / tau)

    def command(self, q: VehicleState) -> tuple[Command, dict]:
        st = self.style
        idx, ref, dist = closest_point(self.path, (q.x, q.y), hint_index=self._hint)
        self._hint = idx
        e0 = error_state(q, ref)

        curvature = self.path.curvature(idx)
        steer_ff = math.atan(curvature * self.params.wheelbase_l) / self.params.beta
        steer_target = clamp(
            steer_ff + st.lateral_gain * e0.e2 + st.heading_gain * e0.e3, -1.0, 1.0
        )
        throttle_target = clamp(
            st.throttle_laziness * ref.v / self.params.speed_noload
            + st.speed_gain * e0.e4,
            0.0,
            1.0,
        )
        self._steering = self._blend(self._steering, steer_target, st.steer_tau)
        self._throttle = self._blend(self._throttle, throttle_target, st.throttle_tau)
        u = Command(self._steering, self._throttle)
        return u, {"e0": e0, "ref_index": idx, "closest_distance": dist}


def collect_driver_dataset(
    trajectories: dict[str, ReferencePath],
    p: VehicleParams,
    run_seconds: float = 60.0,
    perturbation: PerturbationSpec | None = None,
    seed: int = 0,
    style: DriverStyle | None = None,
    control_hz: float = 10.0,
    plant_hz: float = 100.0,
    episode_seconds: float = 10.0,
) -> Dataset:
    """Scripted-driver analogue of MPC dataset collection, tagged hil."""
    perturbation = perturbation or PerturbationSpec()
    return collect_closed_loop(
        trajectories,
        lambda path: SmoothDriver(path, p, style, dt=1.0 / control_hz),
        p,
        run_seconds,
        perturbation,
        seed,
        source="hil",
        control_hz=control_hz,
        plant_hz=plant_hz,
        episode_seconds=episode_seconds,
    )
