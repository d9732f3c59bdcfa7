"""Layered-medium underwater acoustic ray tracing and IRTUL localization.

The package models the water column as a piecewise-linear sound velocity
profile, traces non-reflected direct rays through it in closed form, inverts
travel time and horizontal range for the launch angle by bisection, and uses
those primitives to locate targets of unknown depth from round-trip derived
one-way times. A greedy profile simplifier (DM-EICPS) trades a controlled
amount of accuracy for tracing speed, and a scenario simulator reproduces
batch accuracy/timing comparisons.
"""

from .svp import (
    DEFAULT_SIMPLIFICATION,
    ProfileError,
    SimplificationControl,
    SoundVelocityProfile,
    dump_profile,
    load_profile,
    parse_profile,
    profile_rmse,
    segment,
    simplify_dm_eicps,
    speed_at,
)
from .raytrace import (
    BisectionError,
    InfeasibleAngleError,
    RayTraceError,
    RayTraceResult,
    SegmentTracer,
    SolveDomainError,
    UnreachableTimeError,
    horizontal_range,
    min_feasible_angle,
    oracle_trace,
    oriented_tracer,
    propagation_time,
    solve_angle_for_range,
    solve_angle_for_time,
    trace,
)
from .localize import (
    GeometryError,
    IrtulConfig,
    IrtulState,
    LocalizationError,
    LocalizationResult,
    Measurement,
    Position,
    horizontal_fix,
    irtul_localize,
    rough_fix,
    time_loss,
)
from .sim import (
    ExperimentReport,
    Node,
    Scenario,
    ScenarioConfig,
    ScenarioError,
    UnlocalizableTargetError,
    benchmark_localization,
    generate_scenario,
    load_scenario_config,
    run_experiment,
    synthesize_measurements,
)

__version__ = "0.1.0"
