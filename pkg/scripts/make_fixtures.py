#!/usr/bin/env python3
"""Regenerate the shipped HIL fixture recordings.

The fixtures stand in for a human driving session: a scripted smooth
driver records (error state, command) pairs on the seven training
trajectories, once with the constant-speed profile and once with the
two-speed profile. Outputs are committed under fixtures/.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from trajlab.dynamics import VehicleParams
from trajlab.drivers import collect_driver_dataset
from trajlab.paths import SpeedProfile, training_set

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "fixtures")
SEED = 5
SPACING = 0.05


def main() -> None:
    os.makedirs(OUT_DIR, exist_ok=True)
    params = VehicleParams()
    variants = {
        "hil_constant.csv": SpeedProfile.constant(1.0),
        "hil_multispeed.csv": SpeedProfile.two_speed(1.0, 2.0, ramp=4.0),
    }
    for name, profile in variants.items():
        trajectories = training_set(profile, spacing=SPACING)
        dataset = collect_driver_dataset(
            trajectories, params, run_seconds=60.0, seed=SEED
        )
        out = os.path.join(OUT_DIR, name)
        dataset.save_csv(out)
        print(f"wrote {len(dataset)} samples to {out}")


if __name__ == "__main__":
    main()
