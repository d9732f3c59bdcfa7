import math

import numpy as np
import pytest

from irtul.svp import SoundVelocityProfile
from irtul.raytrace import SegmentTracer


def random_profile(
    rng,
    n_points=6,
    span_range=(500.0, 3000.0),
    speed_range=(1440.0, 1560.0),
    min_speed_step=None,
):
    """Random piecewise-linear profile with reasonably thick layers."""
    span = rng.uniform(*span_range)
    weights = rng.uniform(1.0, 3.0, n_points - 1)
    depths = np.concatenate(([0.0], np.cumsum(weights / weights.sum() * span)))
    while True:
        speeds = rng.uniform(*speed_range, n_points)
        if min_speed_step is None:
            break
        if np.all(np.abs(np.diff(speeds)) >= min_speed_step):
            break
    return SoundVelocityProfile(tuple(zip(depths.tolist(), speeds.tolist())))


def feasible_angle(rng, profile, margin=0.05):
    """Launch angle drawn uniformly above the turning limit plus a margin."""
    theta_min = SegmentTracer(profile).theta_min
    return float(rng.uniform(theta_min + margin, math.pi / 2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
