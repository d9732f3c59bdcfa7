"""Command-line interface: tracing, angle solving, simplification, localization,
batch experiments, and timing benchmarks.

Exit codes: 0 success, 1 I/O or parse failure, 2 domain/contract failure.
Angles are degrees on the command line, radians inside the library.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path

import yaml

from . import raytrace, sim, svp
from .localize import (
    GeometryError,
    IrtulConfig,
    LocalizationError,
    Measurement,
    Position,
    irtul_localize,
)
from .raytrace import InfeasibleAngleError, RayTraceError
from .svp import ProfileError, SimplificationControl

EXIT_OK = 0
EXIT_IO = 1
EXIT_DOMAIN = 2


class _InputError(Exception):
    """File or parse problem (exit code 1)."""


def _load_profile(path: str) -> svp.SoundVelocityProfile:
    try:
        return svp.load_profile(path)
    except OSError as exc:
        raise _InputError(f"cannot read {path}: {exc}") from exc
    except ProfileError as exc:
        raise _InputError(f"bad profile {path}: {exc}") from exc


def _load_measurements(path: str) -> list[Measurement]:
    """Read ``ref_x,ref_y,ref_z,one_way_time_s`` rows (optional header)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _InputError(f"cannot read {path}: {exc}") from exc
    rows = [line.split(",") for line in text.splitlines() if line.strip()]
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
    measurements = []
    for i, row in enumerate(rows):
        if len(row) != 4:
            raise _InputError(f"{path}: expected 4 columns on row {i + 1}, got {len(row)}")
        try:
            x, y, z, t = (float(c) for c in row)
        except ValueError as exc:
            raise _InputError(f"{path}: malformed row {i + 1}: {exc}") from exc
        try:
            measurements.append(Measurement(f"ref-{i:03d}", t, Position(x, y, z)))
        except ValueError as exc:
            raise _InputError(f"{path}: row {i + 1}: {exc}") from exc
    return measurements


def _oriented_segment(profile, z_from, z_to):
    seg = svp.segment(profile, z_from, z_to)
    if z_from > z_to:
        seg = seg.flipped()
    return seg


def cmd_trace(args) -> int:
    profile = _load_profile(args.svp)
    seg = _oriented_segment(profile, args.z_from, args.z_to)
    result = raytrace.trace(seg, math.radians(args.theta0_deg))
    print(f"t={result.travel_time:.9f} h={result.horizontal_range:.9f}")
    return EXIT_OK


def cmd_solve(args) -> int:
    profile = _load_profile(args.svp)
    seg = _oriented_segment(profile, args.z_from, args.z_to)
    if args.mode == "time":
        tol = args.tol if args.tol is not None else 1e-8
        theta = raytrace.solve_angle_for_time(seg, args.target, tol)
    else:
        tol = args.tol if args.tol is not None else 1e-6
        theta = raytrace.solve_angle_for_range(seg, args.target, tol)
    print(f"theta0_deg={math.degrees(theta):.6f}")
    return EXIT_OK


def cmd_simplify(args) -> int:
    profile = _load_profile(args.svp)
    if args.points is not None:
        control = SimplificationControl(point_count=args.points)
    else:
        control = SimplificationControl(rmse_threshold=args.rmse)
    simplified = svp.simplify_dm_eicps(profile, control)
    try:
        Path(args.out).write_text(svp.dump_profile(simplified), encoding="utf-8")
    except OSError as exc:
        raise _InputError(f"cannot write {args.out}: {exc}") from exc
    print(f"rmse={svp.profile_rmse(profile, simplified):.12g}")
    return EXIT_OK


def cmd_localize(args) -> int:
    profile = _load_profile(args.svp)
    measurements = _load_measurements(args.measurements)
    config = IrtulConfig(
        initial_depth_step=args.depth_step,
        depth_step_threshold=args.depth_threshold,
        time_tolerance=args.time_tol,
        range_tolerance=args.range_tol,
        mean_speed=args.mean_speed,
        max_iterations=args.max_iterations,
    )
    result = irtul_localize(profile, measurements, config)
    print(f"x={result.position.x:.6f} y={result.position.y:.6f} z={result.position.z:.6f}")
    print(f"iterations={result.iterations} converged={result.converged}")
    if args.verbose:
        for i, (before, after) in enumerate(result.loss_history, 1):
            print(f"iter={i} loss_before={before:.9e} loss_after={after:.9e}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        config = sim.load_scenario_config(args.scenario)
    except OSError as exc:
        raise _InputError(f"cannot read {args.scenario}: {exc}") from exc
    except (sim.ScenarioError, yaml.YAMLError) as exc:
        raise _InputError(f"bad scenario {args.scenario}: {exc}") from exc
    if args.seed is not None:
        config = dataclasses.replace(config, rng_seed=args.seed)
    profile = _load_profile(args.svp)
    simplified = svp.simplify_dm_eicps(
        profile, SimplificationControl(point_count=args.simplify_points)
    )
    scenario = sim.generate_scenario(config)
    report = sim.run_experiment(scenario, profile, simplified)

    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "per_target.csv").write_text(report.per_target_csv(), encoding="utf-8")
        (out_dir / "summary.csv").write_text(report.summary_csv(), encoding="utf-8")
    except OSError as exc:
        raise _InputError(f"cannot write to {out_dir}: {exc}") from exc

    for method in sim.METHODS:
        s = report.summaries[method]
        print(
            f"{method}: mean_rmse_m={s.mean_rmse:.3f} std_m={s.std_rmse:.3f} "
            f"mean_wall_us={s.mean_wall_us:.0f}"
        )
    for method in (sim.METHOD_ORIGINAL, sim.METHOD_SIMPLIFIED):
        cx, cy, cz = report.corrections[method]
        print(
            f"{method} correction vs constant_speed: x={cx:.3f} y={cy:.3f} z={cz:.3f}"
        )
    print(
        f"targets={len(report.results) // 3} unlocalizable={len(report.unlocalizable)} "
        f"failed={len(report.failed)}"
    )
    return EXIT_OK


def cmd_benchmark(args) -> int:
    profile = _load_profile(args.svp)
    simplified = svp.simplify_dm_eicps(
        profile, SimplificationControl(point_count=args.simplify_points)
    )
    result = sim.benchmark_localization(profile, simplified, args.repeats, args.seed)
    print(
        f"original: layers={result.original_layers} "
        f"mean_wall_s={result.original_mean_wall_s:.6f} "
        f"ops_per_localization={result.original_ops_per_localization:.0f}"
    )
    print(
        f"simplified: layers={result.simplified_layers} "
        f"mean_wall_s={result.simplified_mean_wall_s:.6f} "
        f"ops_per_localization={result.simplified_ops_per_localization:.0f}"
    )
    print(f"speedup={result.speedup:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irtul",
        description="Underwater acoustic ray tracing and IRTUL localization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="travel time and horizontal range for a launch angle")
    p.add_argument("svp", help="profile CSV (depth_m,speed_mps)")
    p.add_argument("--theta0-deg", type=float, required=True, dest="theta0_deg")
    p.add_argument("--z-from", type=float, required=True, dest="z_from")
    p.add_argument("--z-to", type=float, required=True, dest="z_to")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("solve", help="launch angle matching a time or range by bisection")
    p.add_argument("svp")
    p.add_argument("--mode", choices=("time", "range"), required=True)
    p.add_argument("--target", type=float, required=True, help="seconds or metres")
    p.add_argument("--z-from", type=float, required=True, dest="z_from")
    p.add_argument("--z-to", type=float, required=True, dest="z_to")
    p.add_argument("--tol", type=float, default=None, help="defaults: 1e-8 s / 1e-6 m")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simplify", help="reduce a profile to feature points")
    p.add_argument("svp")
    p.add_argument("out", help="output CSV path")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--points", type=int, default=None)
    group.add_argument("--rmse", type=float, default=None, help="target RMSE in m/s")
    p.set_defaults(func=cmd_simplify)

    p = sub.add_parser("localize", help="locate one target from a measurement CSV")
    p.add_argument("svp")
    p.add_argument("measurements", help="CSV: ref_x,ref_y,ref_z,one_way_time_s")
    p.add_argument("--depth-step", type=float, default=2.0)
    p.add_argument("--depth-threshold", type=float, default=0.2)
    p.add_argument("--time-tol", type=float, default=1e-5)
    p.add_argument("--range-tol", type=float, default=0.1)
    p.add_argument("--mean-speed", type=float, default=1500.0)
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("experiment", help="batch comparison over a generated scenario")
    p.add_argument("scenario", help="scenario YAML file")
    p.add_argument("svp")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--simplify-points", type=int, default=8)
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("benchmark", help="localization wall time, full vs simplified profile")
    p.add_argument("svp")
    p.add_argument("--simplify-points", type=int, default=8)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InfeasibleAngleError as exc:
        print(
            f"error: {exc} (minimum feasible angle "
            f"{math.degrees(exc.theta_min):.6f} degrees)",
            file=sys.stderr,
        )
        return EXIT_DOMAIN
    except (
        RayTraceError,
        ProfileError,
        GeometryError,
        LocalizationError,
        sim.ScenarioError,
        sim.UnlocalizableTargetError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
