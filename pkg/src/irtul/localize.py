"""IRTUL: iterative ray-traced localization of a target with unknown depth.

A constant-speed least-squares fix seeds the estimate. Each iteration then
converts the measured one-way times into ray-traced horizontal ranges at the
current candidate depth, re-fixes (x, y) by least squares in the horizontal
plane, scores the depth by a time-mismatch loss, and tunes the depth with a
direction-flipping, step-halving search until the step drops below threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raytrace import (
    BisectionError,
    SegmentTracer,
    tracer_between,
)
from .svp import ProfileError, SoundVelocityProfile

# Candidate depths are kept this far inside the profile range so that every
# reference still spans a non-degenerate segment.
DEPTH_CLAMP_MARGIN = 1e-3

# Relative condition-number limit on the normal equations of the fixes.
MAX_NORMAL_CONDITION = 1e12


class GeometryError(ValueError):
    """Reference geometry too degenerate for a least-squares fix."""


class LocalizationError(RuntimeError):
    """Localization could not proceed; carries the failing iteration state."""

    def __init__(self, message: str, state: "IrtulState | None" = None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class Position:
    """Cartesian position; ``z`` is depth in metres, positive downward."""

    x: float
    y: float
    z: float


@dataclass(frozen=True)
class Measurement:
    """One reference node's one-way equivalent propagation time.

    Derived from round-trip time of arrival, so clock offsets between nodes
    are already cancelled and do not appear here.
    """

    reference: str
    one_way_time: float
    reference_position: Position

    def __post_init__(self) -> None:
        if self.one_way_time <= 0.0:
            raise ValueError(
                f"one_way_time must be positive, got {self.one_way_time!r}"
            )


@dataclass(frozen=True)
class IrtulConfig:
    """Tuning knobs of the iterative localization loop."""

    initial_depth_step: float = 2.0
    depth_step_threshold: float = 0.2
    time_tolerance: float = 1e-5
    range_tolerance: float = 0.1
    mean_speed: float = 1500.0
    max_iterations: int = 100

    def __post_init__(self) -> None:
        values = (
            self.initial_depth_step,
            self.depth_step_threshold,
            self.time_tolerance,
            self.range_tolerance,
            self.mean_speed,
            self.max_iterations,
        )
        if any(v <= 0 for v in values):
            raise ValueError("all IrtulConfig values must be positive")
        if self.depth_step_threshold >= self.initial_depth_step:
            raise ValueError("depth_step_threshold must be below initial_depth_step")


@dataclass
class IrtulState:
    """Snapshot of one depth-tuning iteration."""

    estimate: Position
    depth_step: float
    direction: int
    loss_before: float
    loss_after: float
    iteration: int


@dataclass(frozen=True)
class LocalizationResult:
    position: Position
    iterations: int
    loss_history: tuple[tuple[float, float], ...]
    converged: bool


def time_loss(simulated, measured) -> float:
    """Sum of squared differences between simulated and measured times.

    Pairing is positional (by reference node), so the loss is order sensitive.
    """
    sim = np.atleast_1d(np.asarray(simulated, dtype=float))
    mea = np.atleast_1d(np.asarray(measured, dtype=float))
    if sim.shape != mea.shape or sim.size < 1:
        raise ValueError("simulated and measured time lists must have equal length >= 1")
    return float(np.sum((sim - mea) ** 2))


def _check_normal_condition(matrix: np.ndarray, what: str) -> None:
    sv = np.linalg.svd(matrix, compute_uv=False)
    if sv[-1] == 0.0 or (sv[0] / sv[-1]) ** 2 > MAX_NORMAL_CONDITION:
        raise GeometryError(f"degenerate reference geometry: {what}")


def rough_fix(measurements, mean_speed: float) -> Position:
    """Constant-speed sphere-intersection fix.

    Converts each time to a pseudorange at ``mean_speed``, subtracts the first
    sphere equation from the rest, and solves the resulting linear system for
    (x, y, z) by least squares. The system is solved with the first reference
    as origin to keep the squared terms well conditioned.
    """
    if len(measurements) < 4:
        raise ValueError("rough fix needs at least 4 measurements")
    pos = np.array(
        [
            (m.reference_position.x, m.reference_position.y, m.reference_position.z)
            for m in measurements
        ]
    )
    rho = mean_speed * np.array([m.one_way_time for m in measurements])
    rel = pos[1:] - pos[0]
    b = 2.0 * rel
    a = (rel ** 2).sum(axis=1) + rho[0] ** 2 - rho[1:] ** 2
    _check_normal_condition(b, "reference nodes are nearly coplanar")
    sol, *_ = np.linalg.lstsq(b, a, rcond=None)
    return Position(
        float(sol[0] + pos[0, 0]), float(sol[1] + pos[0, 1]), float(sol[2] + pos[0, 2])
    )


def _horizontal_fix_xy(xy: np.ndarray, h: np.ndarray) -> tuple[float, float]:
    """Normal-equations solve of the differenced horizontal range system.

    Works in coordinates relative to the first reference, then shifts back;
    the normal matrix is 2x2 so its condition number is checked in closed
    form (collinear references make it singular).
    """
    bx = 2.0 * (xy[1:, 0] - xy[0, 0])
    by = 2.0 * (xy[1:, 1] - xy[0, 1])
    a = 0.25 * (bx ** 2 + by ** 2) + h[0] ** 2 - h[1:] ** 2
    m11 = bx @ bx
    m12 = bx @ by
    m22 = by @ by
    trace_m = m11 + m22
    det_m = m11 * m22 - m12 * m12
    disc = math.sqrt(max(trace_m * trace_m - 4.0 * det_m, 0.0))
    lam_min = 0.5 * (trace_m - disc)
    lam_max = 0.5 * (trace_m + disc)
    if lam_min <= 0.0 or lam_max > MAX_NORMAL_CONDITION * lam_min:
        raise GeometryError("degenerate reference geometry: references are horizontally collinear")
    c1 = bx @ a
    c2 = by @ a
    x = (m22 * c1 - m12 * c2) / det_m
    y = (m11 * c2 - m12 * c1) / det_m
    return float(x + xy[0, 0]), float(y + xy[0, 1])


def horizontal_fix(ranges) -> tuple[float, float]:
    """Least-squares (x, y) from per-reference horizontal ranges.

    ``ranges`` is a sequence of ``(reference_position, horizontal_range)``
    pairs; the system is differenced against the first entry and solved via
    the normal equations in the least-squares sense.
    """
    if len(ranges) < 4:
        raise ValueError("horizontal fix needs at least 4 ranges")
    xy = np.array([(p.x, p.y) for p, _ in ranges])
    h = np.array([r for _, r in ranges], dtype=float)
    return _horizontal_fix_xy(xy, h)


def _clamp_depth(profile: SoundVelocityProfile, z: float) -> float:
    lo = profile.depth_min + DEPTH_CLAMP_MARGIN
    hi = profile.depth_max - DEPTH_CLAMP_MARGIN
    return min(max(z, lo), hi)


@dataclass
class _RefGroup:
    z_ref: float
    idx: np.ndarray


@dataclass
class _DepthEval:
    x: float
    y: float
    loss: float


def _evaluate_depth(pd, ps, groups, xy, t_meas, z, config, active):
    """Run the per-depth pipeline; returns ``(eval, failed_indices)``.

    ``pd``/``ps`` are the profile's depth and speed sample arrays. Failures
    are measurement indices whose time or range has no feasible ray at this
    depth. When any occur the evaluation is abandoned so the caller can
    shrink the active set and retry with consistent references.
    """
    n = t_meas.size
    h_hat = np.full(n, np.nan)
    failed: list[int] = []
    tracers: dict[float, SegmentTracer] = {}
    for g in groups:
        sel = g.idx[active[g.idx]]
        if sel.size == 0:
            continue
        try:
            tracer = tracer_between(pd, ps, g.z_ref, z)
        except ProfileError:
            failed.extend(int(i) for i in sel)
            continue
        tracers[g.z_ref] = tracer
        angles, ok = tracer.solve_times_masked(t_meas[sel], config.time_tolerance)
        failed.extend(int(i) for i in sel[~ok])
        h_hat[sel[ok]] = tracer.ranges(angles[ok], check=False)
    if failed:
        return None, failed

    use = np.flatnonzero(active)
    x, y = _horizontal_fix_xy(xy[use], h_hat[use])
    h_dot = np.hypot(xy[:, 0] - x, xy[:, 1] - y)
    t_sim = np.full(n, np.nan)
    for g in groups:
        sel = g.idx[active[g.idx]]
        if sel.size == 0:
            continue
        tracer = tracers[g.z_ref]
        angles, ok = tracer.solve_ranges_masked(h_dot[sel], config.range_tolerance)
        failed.extend(int(i) for i in sel[~ok])
        t_sim[sel[ok]] = tracer.times(angles[ok], check=False)
    if failed:
        return None, failed
    loss = time_loss(t_sim[use], t_meas[use])
    return _DepthEval(x, y, loss), []


def _evaluate_pair(pd, ps, groups, xy, t_meas, z_a, z_b, config, eval_a=None):
    """Evaluate both candidate depths over a common usable reference set.

    References whose measured time is infeasible at either depth (for example
    shorter than the vertical-ray time there) are dropped for this iteration,
    provided at least 4 remain. ``eval_a`` may carry a full-set evaluation of
    ``z_a`` from the previous iteration; it is discarded if any drop occurs.
    Returns ``(eval_a, eval_b, full_set)``.
    """
    active = np.ones(t_meas.size, dtype=bool)
    while True:
        if eval_a is None:
            eval_a, fail_a = _evaluate_depth(pd, ps, groups, xy, t_meas, z_a, config, active)
        else:
            fail_a = []
        eval_b, fail_b = _evaluate_depth(pd, ps, groups, xy, t_meas, z_b, config, active)
        newly = sorted(set(fail_a) | set(fail_b))
        if not newly:
            return eval_a, eval_b, bool(active.all())
        eval_a = None
        active[newly] = False
        if int(active.sum()) < 4:
            raise GeometryError(
                "fewer than 4 usable references after dropping infeasible measurements"
            )


def irtul_localize(
    profile: SoundVelocityProfile,
    measurements,
    config: IrtulConfig = IrtulConfig(),
) -> LocalizationResult:
    """Locate a target of unknown depth from one-way times to reference nodes.

    Every iteration evaluates the time-mismatch loss at the current depth and
    at the depth tuned by the current step and direction, keeps the better
    position, and on a worsening step halves the step and flips direction.
    The loop stops when the step falls below ``config.depth_step_threshold``
    (converged) or after ``config.max_iterations`` iterations.
    """
    measurements = list(measurements)
    if len(measurements) < 4:
        raise ValueError("localization needs at least 4 measurements")
    for m in measurements:
        z_ref = m.reference_position.z
        if not profile.depth_min <= z_ref <= profile.depth_max:
            raise ValueError(
                f"reference {m.reference} depth {z_ref} outside the profile range"
            )

    rough = rough_fix(measurements, config.mean_speed)
    x, y = rough.x, rough.y
    z = _clamp_depth(profile, rough.z)

    pd = np.asarray(profile.depths, dtype=float)
    ps = np.asarray(profile.speeds, dtype=float)
    xy = np.array(
        [(m.reference_position.x, m.reference_position.y) for m in measurements]
    )
    z_refs = np.array([m.reference_position.z for m in measurements])
    t_meas = np.array([m.one_way_time for m in measurements])
    groups = [
        _RefGroup(float(v), np.flatnonzero(z_refs == v)) for v in np.unique(z_refs)
    ]

    depth_step = config.initial_depth_step
    direction = 1
    history: list[tuple[float, float]] = []
    converged = False
    carried = None  # full-set evaluation at the current depth, if still valid

    for iteration in range(1, config.max_iterations + 1):
        if depth_step < config.depth_step_threshold:
            converged = True
            break
        z_tuned = _clamp_depth(profile, z + direction * depth_step)
        try:
            eval_here, eval_tuned, full_set = _evaluate_pair(
                pd, ps, groups, xy, t_meas, z, z_tuned, config, carried
            )
        except (GeometryError, BisectionError) as exc:
            state = IrtulState(
                estimate=Position(x, y, z),
                depth_step=depth_step,
                direction=direction,
                loss_before=math.nan,
                loss_after=math.nan,
                iteration=iteration,
            )
            raise LocalizationError(
                f"iteration {iteration} failed at depth {z:.3f} m: {exc}", state
            ) from exc
        history.append((eval_here.loss, eval_tuned.loss))
        if eval_tuned.loss > eval_here.loss or z_tuned == z:
            # worsening step, or a step clamped back onto the current depth
            # (it pointed out of the water column): halve and turn around
            x, y = eval_here.x, eval_here.y
            depth_step *= 0.5
            direction = -direction
            carried = eval_here if full_set else None
        else:
            x, y, z = eval_tuned.x, eval_tuned.y, z_tuned
            carried = eval_tuned if full_set else None
    else:
        converged = depth_step < config.depth_step_threshold

    return LocalizationResult(
        position=Position(x, y, z),
        iterations=len(history),
        loss_history=tuple(history),
        converged=converged,
    )
