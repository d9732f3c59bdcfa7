"""Network scenario generation, measurement synthesis, and batch experiments.

The experiment runner compares three localization variants on identical
measurement sets per target: a constant-speed fix, IRTUL with the full
profile, and IRTUL with a simplified profile. Everything is deterministic
given the scenario seed, except wall-clock timing fields.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import raytrace
from .localize import (
    IrtulConfig,
    LocalizationError,
    Measurement,
    Position,
    irtul_localize,
    rough_fix,
)
from .raytrace import oriented_tracer
from .svp import ProfileError, SoundVelocityProfile

ROLE_BUOY = "buoy"
ROLE_ANCHOR = "anchor"
ROLE_SENSOR_TARGET = "sensor_target"
ROLE_NONCOOP_TARGET = "noncoop_target"
_ROLES = {ROLE_BUOY, ROLE_ANCHOR, ROLE_SENSOR_TARGET, ROLE_NONCOOP_TARGET}

METHOD_CONSTANT = "constant_speed"
METHOD_ORIGINAL = "original_svp"
METHOD_SIMPLIFIED = "simplified_svp"
METHODS = (METHOD_CONSTANT, METHOD_ORIGINAL, METHOD_SIMPLIFIED)

SYNTH_RANGE_TOL = 1e-6  # m, forward ray solve when synthesizing measurements


class ScenarioError(ValueError):
    """Invalid scenario configuration."""


class UnlocalizableTargetError(RuntimeError):
    """Fewer than 4 usable in-range references for a target."""

    def __init__(self, target_id: str, count: int):
        self.target_id = target_id
        self.count = count
        super().__init__(
            f"target {target_id} has only {count} usable in-range references"
        )


@dataclass(frozen=True)
class Node:
    id: str
    role: str
    position: Position

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"unknown node role {self.role!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    area_x: float = 10000.0
    area_y: float = 10000.0
    depth: float = 3000.0
    buoy_count: int = 25
    anchor_count: int = 25
    target_count: int = 200
    comm_range: float = 4500.0
    time_noise_sigma: float = 0.003
    rng_seed: int = 42

    def __post_init__(self) -> None:
        if min(self.buoy_count, self.anchor_count, self.target_count) < 1:
            raise ScenarioError("node counts must be at least 1")
        if self.comm_range <= 0:
            raise ScenarioError("comm_range must be positive")
        if self.time_noise_sigma < 0:
            raise ScenarioError("time_noise_sigma must be non-negative")
        if min(self.area_x, self.area_y, self.depth) <= 0:
            raise ScenarioError("area and depth must be positive")


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[Node, ...]
    truth: dict[str, Position]
    config: ScenarioConfig

    def references(self) -> list[Node]:
        return [n for n in self.nodes if n.role in (ROLE_BUOY, ROLE_ANCHOR)]

    def targets(self) -> list[Node]:
        return [n for n in self.nodes if n.role not in (ROLE_BUOY, ROLE_ANCHOR)]


def _grid(count: int, span_x: float, span_y: float, what: str):
    side = math.isqrt(count)
    if side * side != count:
        raise ScenarioError(f"{what} must be a perfect square, got {count}")
    xs = (np.arange(side) + 0.5) * (span_x / side)
    ys = (np.arange(side) + 0.5) * (span_y / side)
    return [(float(x), float(y)) for y in ys for x in xs]


def generate_scenario(config: ScenarioConfig) -> Scenario:
    """Grid-placed reference nodes plus uniformly random suspended targets.

    Buoys sit on a centered sqrt(count) x sqrt(count) grid at the surface,
    anchors on the same grid at the bottom; targets are i.i.d. uniform in the
    volume. Deterministic for a given ``rng_seed``.
    """
    nodes: list[Node] = []
    for i, (x, y) in enumerate(_grid(config.buoy_count, config.area_x, config.area_y, "buoy_count")):
        nodes.append(Node(f"buoy-{i:03d}", ROLE_BUOY, Position(x, y, 0.0)))
    for i, (x, y) in enumerate(_grid(config.anchor_count, config.area_x, config.area_y, "anchor_count")):
        nodes.append(Node(f"anchor-{i:03d}", ROLE_ANCHOR, Position(x, y, config.depth)))

    rng = np.random.default_rng([config.rng_seed, 0])
    truth: dict[str, Position] = {}
    for i in range(config.target_count):
        x = float(rng.uniform(0.0, config.area_x))
        y = float(rng.uniform(0.0, config.area_y))
        z = float(rng.uniform(0.0, config.depth))
        while not 0.0 < z < config.depth:
            z = float(rng.uniform(0.0, config.depth))
        role = ROLE_SENSOR_TARGET if i % 2 == 0 else ROLE_NONCOOP_TARGET
        node = Node(f"target-{i:03d}", role, Position(x, y, z))
        nodes.append(node)
        truth[node.id] = node.position
    return Scenario(tuple(nodes), truth, config)


def synthesize_measurements(
    scenario: Scenario,
    profile: SoundVelocityProfile,
    target_id: str,
    rng: np.random.Generator,
) -> list[Measurement]:
    """Forward ray-traced one-way times from every in-range reference.

    For each reference within communication range (3D straight-line), the
    launch angle whose horizontal range matches the true horizontal distance
    is solved by bisection and the resulting travel time is taken as truth;
    Gaussian noise with the configured sigma is then added to the one-way
    time. References with no feasible direct ray (acoustic shadow) or a
    non-positive noisy time are dropped like out-of-range ones.
    """
    if target_id not in scenario.truth:
        raise ValueError(f"unknown target {target_id!r}")
    target = scenario.truth[target_id]
    cfg = scenario.config
    if profile.depth_min > 0.0 or profile.depth_max < cfg.depth:
        raise ScenarioError(
            f"profile range [{profile.depth_min}, {profile.depth_max}] does not "
            f"cover the scenario water column [0, {cfg.depth}]"
        )

    refs = sorted(scenario.references(), key=lambda n: n.id)
    in_range = [
        n
        for n in refs
        if math.dist(
            (n.position.x, n.position.y, n.position.z), (target.x, target.y, target.z)
        )
        <= cfg.comm_range
    ]
    if len(in_range) < 4:
        raise UnlocalizableTargetError(target_id, len(in_range))

    m = len(in_range)
    h_true = np.array(
        [math.hypot(n.position.x - target.x, n.position.y - target.y) for n in in_range]
    )
    z_refs = np.array([n.position.z for n in in_range])
    t_true = np.full(m, np.nan)
    keep = np.ones(m, dtype=bool)
    for z_ref in np.unique(z_refs):
        sel = np.flatnonzero(z_refs == z_ref)
        try:
            tracer = oriented_tracer(profile, float(z_ref), target.z)
        except ProfileError:
            keep[sel] = False
            continue
        angles, ok = tracer.solve_ranges_masked(h_true[sel], SYNTH_RANGE_TOL)
        keep[sel[~ok]] = False
        t_true[sel[ok]] = tracer.times(angles[ok], check=False)

    noise = (
        rng.normal(0.0, cfg.time_noise_sigma, size=m)
        if cfg.time_noise_sigma > 0
        else np.zeros(m)
    )
    t_meas = t_true + noise
    keep &= t_meas > 0.0
    if int(keep.sum()) < 4:
        raise UnlocalizableTargetError(target_id, int(keep.sum()))
    return [
        Measurement(in_range[i].id, float(t_meas[i]), in_range[i].position)
        for i in np.flatnonzero(keep)
    ]


@dataclass(frozen=True)
class TargetResult:
    target_id: str
    method: str
    err_x: float
    err_y: float
    err_z: float
    err_3d: float
    iterations: int
    wall_us: int


@dataclass(frozen=True)
class MethodSummary:
    method: str
    mean_rmse: float
    std_rmse: float
    mean_wall_us: float
    total_wall_us: float
    mean_iterations: float


@dataclass(frozen=True)
class ExperimentReport:
    results: tuple[TargetResult, ...]
    summaries: dict[str, MethodSummary]
    corrections: dict[str, tuple[float, float, float]]
    unlocalizable: tuple[str, ...]
    failed: tuple[str, ...]

    def per_target_csv(self) -> str:
        out = io.StringIO()
        out.write("target_id,method,err_x_m,err_y_m,err_z_m,err_3d_m,iterations,wall_us\n")
        for r in self.results:
            out.write(
                f"{r.target_id},{r.method},{r.err_x!r},{r.err_y!r},{r.err_z!r},"
                f"{r.err_3d!r},{r.iterations},{r.wall_us}\n"
            )
        return out.getvalue()

    def summary_csv(self) -> str:
        out = io.StringIO()
        out.write("method,mean_rmse_m,std_m,mean_wall_us\n")
        for method in METHODS:
            s = self.summaries[method]
            out.write(f"{method},{s.mean_rmse!r},{s.std_rmse!r},{s.mean_wall_us!r}\n")
        return out.getvalue()


def _error_record(target_id, method, estimate: Position, truth: Position, iterations, wall_s):
    ex = estimate.x - truth.x
    ey = estimate.y - truth.y
    ez = estimate.z - truth.z
    return TargetResult(
        target_id=target_id,
        method=method,
        err_x=ex,
        err_y=ey,
        err_z=ez,
        err_3d=math.sqrt(ex * ex + ey * ey + ez * ez),
        iterations=iterations,
        wall_us=int(round(wall_s * 1e6)),
    )


def run_experiment(
    scenario: Scenario,
    profile: SoundVelocityProfile,
    simplified: SoundVelocityProfile,
    irtul_config: IrtulConfig = IrtulConfig(),
) -> ExperimentReport:
    """Localize every target three ways on identical per-target measurements.

    Per target: one synthesized measurement set feeds (a) the constant-speed
    fix, (b) IRTUL with ``profile``, (c) IRTUL with ``simplified``. Targets
    without enough references are counted, never aborting the batch.
    """
    results: list[TargetResult] = []
    estimates: dict[str, dict[str, Position]] = {}
    unlocalizable: list[str] = []
    failed: list[str] = []

    targets = sorted(scenario.targets(), key=lambda n: n.id)
    for idx, node in enumerate(targets):
        rng = np.random.default_rng([scenario.config.rng_seed, 1, idx])
        try:
            measurements = synthesize_measurements(scenario, profile, node.id, rng)
        except UnlocalizableTargetError:
            unlocalizable.append(node.id)
            continue
        truth = scenario.truth[node.id]
        try:
            t0 = time.perf_counter()
            pos_const = rough_fix(measurements, irtul_config.mean_speed)
            wall_const = time.perf_counter() - t0

            t0 = time.perf_counter()
            res_orig = irtul_localize(profile, measurements, irtul_config)
            wall_orig = time.perf_counter() - t0

            t0 = time.perf_counter()
            res_simp = irtul_localize(simplified, measurements, irtul_config)
            wall_simp = time.perf_counter() - t0
        except (LocalizationError, ValueError):
            failed.append(node.id)
            continue

        results.append(_error_record(node.id, METHOD_CONSTANT, pos_const, truth, 0, wall_const))
        results.append(
            _error_record(node.id, METHOD_ORIGINAL, res_orig.position, truth, res_orig.iterations, wall_orig)
        )
        results.append(
            _error_record(node.id, METHOD_SIMPLIFIED, res_simp.position, truth, res_simp.iterations, wall_simp)
        )
        estimates[node.id] = {
            METHOD_CONSTANT: pos_const,
            METHOD_ORIGINAL: res_orig.position,
            METHOD_SIMPLIFIED: res_simp.position,
        }

    summaries = {}
    for method in METHODS:
        rows = [r for r in results if r.method == method]
        err = np.array([r.err_3d for r in rows]) if rows else np.array([np.nan])
        wall = np.array([r.wall_us for r in rows], dtype=float) if rows else np.array([np.nan])
        iters = np.array([r.iterations for r in rows], dtype=float) if rows else np.array([np.nan])
        summaries[method] = MethodSummary(
            method=method,
            mean_rmse=float(err.mean()),
            std_rmse=float(err.std()),
            mean_wall_us=float(wall.mean()),
            total_wall_us=float(wall.sum()),
            mean_iterations=float(iters.mean()),
        )

    corrections = {}
    for method in (METHOD_ORIGINAL, METHOD_SIMPLIFIED):
        deltas = np.array(
            [
                (
                    abs(est[method].x - est[METHOD_CONSTANT].x),
                    abs(est[method].y - est[METHOD_CONSTANT].y),
                    abs(est[method].z - est[METHOD_CONSTANT].z),
                )
                for est in estimates.values()
            ]
        )
        corrections[method] = (
            (float(deltas[:, 0].mean()), float(deltas[:, 1].mean()), float(deltas[:, 2].mean()))
            if deltas.size
            else (math.nan, math.nan, math.nan)
        )

    return ExperimentReport(
        results=tuple(results),
        summaries=summaries,
        corrections=corrections,
        unlocalizable=tuple(unlocalizable),
        failed=tuple(failed),
    )


# Scenario file keys, named after the usual experiment parameter wording.
_SCENARIO_KEYS = {
    "communication_range_m": "comm_range",
    "area_x_m": "area_x",
    "area_y_m": "area_y",
    "depth_m": "depth",
    "surface_buoys": "buoy_count",
    "anchor_nodes": "anchor_count",
    "target_nodes": "target_count",
    "time_noise_sigma_s": "time_noise_sigma",
    "rng_seed": "rng_seed",
}


def load_scenario_config(path: str | Path) -> ScenarioConfig:
    """Read a flat key/value scenario file (YAML mapping)."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ScenarioError(f"scenario file {path} must be a flat key/value mapping")
    kwargs = {}
    for key, value in raw.items():
        if key not in _SCENARIO_KEYS:
            raise ScenarioError(f"unknown scenario key {key!r}")
        kwargs[_SCENARIO_KEYS[key]] = value
    return ScenarioConfig(**kwargs)


@dataclass(frozen=True)
class BenchmarkResult:
    original_layers: int
    simplified_layers: int
    original_mean_wall_s: float
    simplified_mean_wall_s: float
    original_ops_per_localization: float
    simplified_ops_per_localization: float

    @property
    def speedup(self) -> float:
        return self.original_mean_wall_s / self.simplified_mean_wall_s


def benchmark_localization(
    profile: SoundVelocityProfile,
    simplified: SoundVelocityProfile,
    repeats: int = 10,
    seed: int = 0,
) -> BenchmarkResult:
    """Mean localization wall time with the full versus simplified profile.

    Runs the same noiseless localizations ``repeats`` times per profile,
    single-threaded, and also reports layer-term operation counts per
    localization from the tracing instrumentation.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    span = profile.depth_max - profile.depth_min
    config = ScenarioConfig(
        area_x=0.8 * span + 2000.0,
        area_y=0.8 * span + 2000.0,
        depth=span,
        buoy_count=4,
        anchor_count=4,
        target_count=3,
        comm_range=4.0 * (span + 2000.0),
        time_noise_sigma=0.0,
        rng_seed=seed,
    )
    scenario = generate_scenario(config)
    rng = np.random.default_rng([seed, 2])
    batches = [
        synthesize_measurements(scenario, profile, node.id, rng)
        for node in scenario.targets()
    ]
    irtul_config = IrtulConfig()

    # untimed warmup so JIT compilation and caches never pollute the means
    irtul_localize(profile, batches[0], irtul_config)
    irtul_localize(simplified, batches[0], irtul_config)

    def timed(svp_profile):
        # best-of-repeats batch time is robust to scheduler noise; the mean
        # over the batch is still the per-localization figure
        raytrace.reset_layer_op_count()
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            for measurements in batches:
                irtul_localize(svp_profile, measurements, irtul_config)
            best = min(best, time.perf_counter() - t0)
        ops = raytrace.layer_op_count() / (repeats * len(batches))
        return best / len(batches), ops

    wall_orig, ops_orig = timed(profile)
    wall_simp, ops_simp = timed(simplified)
    return BenchmarkResult(
        original_layers=len(profile.points) - 1,
        simplified_layers=len(simplified.points) - 1,
        original_mean_wall_s=wall_orig,
        simplified_mean_wall_s=wall_simp,
        original_ops_per_localization=ops_orig,
        simplified_ops_per_localization=ops_simp,
    )
