"""Bundled data: a canonical deep-water sound velocity profile and a default
experiment scenario."""

from pathlib import Path

_HERE = Path(__file__).parent


def default_profile_path() -> Path:
    """30-sample deep-water profile, 0 to 3000 m."""
    return _HERE / "deep_water_svp.csv"


def default_scenario_path() -> Path:
    """10 km x 10 km, 3 km deep network scenario."""
    return _HERE / "scenario_10km_deep.yaml"
