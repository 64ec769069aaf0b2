"""Trajectory-tracking control lab.

Simulates a 4-DOF vehicle, tracks reference paths with an error-state
MPC, estimates speed with an EKF, clones the controller into a small
feed-forward network from MPC or human-in-the-loop data, and evaluates
the result on unseen courses.
"""

from .dynamics import Command, VehicleParams, VehicleState, step, wrap_angle
from .control import ErrorState, MpcConfig, MpcController, error_state, mpc_solve
from .paths import (
    ReferencePath,
    ReferenceSample,
    SpeedProfile,
    closest_point,
    evaluation_course,
    make_circle,
    make_course,
    make_line,
    reference_window,
    training_set,
)

__version__ = "0.1.0"

__all__ = [
    "Command",
    "ErrorState",
    "MpcConfig",
    "MpcController",
    "ReferencePath",
    "ReferenceSample",
    "SpeedProfile",
    "VehicleParams",
    "VehicleState",
    "__version__",
    "closest_point",
    "error_state",
    "evaluation_course",
    "make_circle",
    "make_course",
    "make_line",
    "mpc_solve",
    "reference_window",
    "step",
    "training_set",
    "wrap_angle",
]
