"""Closed-form acoustic ray tracing through a piecewise-linear speed segment.

Conventions
-----------
* A traced segment's first sample is the signal source and its last sample is
  the far end. Up-going propagation is handled by flipping the segment so the
  source still comes first (``SoundVelocityProfile.flipped``); travel time and
  horizontal range are reciprocal under that reversal.
* The grazing angle is measured from the horizontal and lies in ``(0, pi/2]``;
  ``pi/2`` is the vertical ray. Horizontal launch is rejected because it never
  traverses the segment.
* Within each constant-gradient layer the ray is a circular arc. Travel time
  and horizontal range have closed forms in the launch angle, both strictly
  decreasing on the feasible bracket, which makes bisection inversion valid.
* Rays that would turn (become horizontal) before traversing the whole segment
  are rejected; the turning limit is ``min_feasible_angle``.

The per-layer evaluation and the bisection loops are numba-compiled; the
micro-segment oracle deliberately stays on an independent numpy path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .svp import ProfileError, SoundVelocityProfile

ISO_GRADIENT_EPS = 1e-6  # m/s across a layer; below this use straight-ray limits
THETA_BRACKET_EPS = 1e-9  # rad above the turning angle for solver brackets
# cos(theta) rounds to exactly 1.0 below ~1.5e-8 rad, which would make the
# near-horizontal bracket endpoint evaluate as a turning ray.
MIN_SOLVER_ANGLE = 2e-8
MAX_BISECT_ITERATIONS = 200
_HALF_PI = math.pi / 2

_STATUS_OK = 0
_STATUS_UNREACHABLE = 1  # below the fastest (vertical) ray
_STATUS_BEYOND = 2  # above the slowest feasible ray / beyond max range
_STATUS_NO_CONVERGENCE = 3
_STATUS_INVALID = 4  # non-finite or negative target

# Layer-term evaluations since the last reset. Single-threaded instrumentation
# used to report how tracing cost scales with profile size.
_layer_ops = 0


def layer_op_count() -> int:
    return _layer_ops


def reset_layer_op_count() -> None:
    global _layer_ops
    _layer_ops = 0


class RayTraceError(ValueError):
    """Base class for ray kinematics errors."""


class InfeasibleAngleError(RayTraceError):
    """Launch angle at or below the turning limit of the segment."""

    def __init__(self, theta0: float, theta_min: float):
        self.theta0 = theta0
        self.theta_min = theta_min
        super().__init__(
            f"grazing angle {theta0:.9f} rad is infeasible for this segment: "
            f"the ray turns before traversing it (minimum feasible angle "
            f"{theta_min:.9f} rad)"
        )


class UnreachableTimeError(RayTraceError):
    """Target time below the vertical-ray minimum: no ray can match it.

    Surfaced distinctly so callers can flag inconsistent measurements.
    """


class SolveDomainError(RayTraceError):
    """Target value beyond the feasible bracket of a solver."""


class BisectionError(RuntimeError):
    """Tolerance not met within the iteration cap (pathological input)."""


@dataclass(frozen=True)
class RayTraceResult:
    """One traced ray: travel time, horizontal range, per-boundary grazing angles.

    ``layer_angles[0]`` is the launch angle; the Snell ray invariant
    ``cos(angle) / speed`` is constant across all boundaries.
    """

    travel_time: float
    horizontal_range: float
    layer_angles: tuple[float, ...]


def _validate_angle(theta0: float) -> None:
    if not 0.0 < theta0 <= _HALF_PI:
        raise RayTraceError(f"grazing angle must lie in (0, pi/2], got {theta0!r} rad")


@njit(cache=True)
def _layer_statics(d, s):
    n = d.size - 1
    dd = np.empty(n)
    inv_ds = np.empty(n)
    log_sratio = np.empty(n)
    sbar = np.empty(n)
    iso = np.empty(n, np.bool_)
    r = np.empty(n + 1)
    r2 = np.empty(n + 1)
    s0 = s[0]
    r2max = 0.0
    for i in range(n + 1):
        r[i] = s[i] / s0
        r2[i] = r[i] * r[i]
        if r2[i] > r2max:
            r2max = r2[i]
    for i in range(n):
        ddi = d[i + 1] - d[i]
        dsi = s[i + 1] - s[i]
        dd[i] = ddi
        iso[i] = abs(dsi) < ISO_GRADIENT_EPS
        inv_ds[i] = ddi / (1.0 if iso[i] else dsi)
        log_sratio[i] = math.log(s[i] / s[i + 1])
        sbar[i] = 0.5 * (s[i] + s[i + 1])
    return dd, inv_ds, r, r2, log_sratio, sbar, iso, r2max


@njit(cache=True)
def _time_at(dd, inv_ds, r2, log_sratio, sbar, iso, cos2):
    total = 0.0
    rt_prev = math.sqrt(max(1.0 - r2[0] * cos2, 0.0))
    for i in range(dd.size):
        rt = math.sqrt(max(1.0 - r2[i + 1] * cos2, 0.0))
        if iso[i]:
            total += dd[i] / (sbar[i] * rt_prev)
        else:
            total += abs(inv_ds[i] * (log_sratio[i] + math.log1p(rt) - math.log1p(rt_prev)))
        rt_prev = rt
    return total


@njit(cache=True)
def _range_at(dd, inv_ds, r, r2, iso, s0, theta):
    if theta == _HALF_PI:
        return 0.0  # vertical ray
    ct = math.cos(theta)
    cos2 = ct * ct
    total = 0.0
    rt_prev = math.sqrt(max(1.0 - r2[0] * cos2, 0.0))
    for i in range(dd.size):
        rt = math.sqrt(max(1.0 - r2[i + 1] * cos2, 0.0))
        if iso[i]:
            total += dd[i] * (r[i] * ct) / rt_prev
        else:
            total += abs(inv_ds[i] * (rt_prev - rt)) * (s0 / ct)
        rt_prev = rt
    return total


@njit(cache=True)
def _times_into(dd, inv_ds, r2, log_sratio, sbar, iso, thetas, out):
    for j in range(thetas.size):
        c = math.cos(thetas[j])
        out[j] = _time_at(dd, inv_ds, r2, log_sratio, sbar, iso, c * c)


@njit(cache=True)
def _ranges_into(dd, inv_ds, r, r2, iso, s0, thetas, out):
    for j in range(thetas.size):
        out[j] = _range_at(dd, inv_ds, r, r2, iso, s0, thetas[j])


@njit(cache=True)
def _solve_times_kernel(
    dd, inv_ds, r2, log_sratio, sbar, iso,
    targets, tol, lo, hi, max_iter, angles, status, tally,
):
    c = math.cos(hi)
    t_min = _time_at(dd, inv_ds, r2, log_sratio, sbar, iso, c * c)
    c = math.cos(lo)
    t_max = _time_at(dd, inv_ds, r2, log_sratio, sbar, iso, c * c)
    evals = 2
    for j in range(targets.size):
        tj = targets[j]
        angles[j] = np.nan
        if not math.isfinite(tj):
            status[j] = _STATUS_INVALID
            continue
        if abs(tj - t_min) <= tol:
            angles[j] = hi
            status[j] = _STATUS_OK
            continue
        if abs(tj - t_max) <= tol:
            angles[j] = lo
            status[j] = _STATUS_OK
            continue
        if tj < t_min:
            status[j] = _STATUS_UNREACHABLE
            continue
        if tj > t_max:
            status[j] = _STATUS_BEYOND
            continue
        a = lo
        b = hi
        status[j] = _STATUS_NO_CONVERGENCE
        for _ in range(max_iter):
            mid = 0.5 * (a + b)
            cm = math.cos(mid)
            tm = _time_at(dd, inv_ds, r2, log_sratio, sbar, iso, cm * cm)
            evals += 1
            if abs(tm - tj) <= tol:
                angles[j] = mid
                status[j] = _STATUS_OK
                break
            if tm > tj:  # decreasing in theta: too slow means angle too small
                a = mid
            else:
                b = mid
    tally[0] = evals


@njit(cache=True)
def _solve_ranges_kernel(
    dd, inv_ds, r, r2, iso, s0,
    targets, tol, lo, hi, max_iter, angles, status, tally,
):
    h_max = _range_at(dd, inv_ds, r, r2, iso, s0, lo)
    evals = 1
    for j in range(targets.size):
        hj = targets[j]
        angles[j] = np.nan
        if not (math.isfinite(hj) and hj >= 0.0):
            status[j] = _STATUS_INVALID
            continue
        if hj == 0.0:
            angles[j] = hi  # vertical ray, exact
            status[j] = _STATUS_OK
            continue
        if abs(hj - h_max) <= tol:
            angles[j] = lo
            status[j] = _STATUS_OK
            continue
        if hj > h_max:
            status[j] = _STATUS_BEYOND
            continue
        a = lo
        b = hi
        status[j] = _STATUS_NO_CONVERGENCE
        for _ in range(max_iter):
            mid = 0.5 * (a + b)
            hm = _range_at(dd, inv_ds, r, r2, iso, s0, mid)
            evals += 1
            if abs(hm - hj) <= tol:
                angles[j] = mid
                status[j] = _STATUS_OK
                break
            if hm > hj:
                a = mid
            else:
                b = mid
    tally[0] = evals


class SegmentTracer:
    """Per-segment precomputation for repeated closed-form evaluations.

    Bisection re-evaluates the same segment many times, so the layer arrays
    are built once; evaluation methods take vectors of launch angles and run
    in compiled per-layer loops.
    """

    def __init__(self, seg: SoundVelocityProfile | tuple[np.ndarray, np.ndarray]):
        if isinstance(seg, SoundVelocityProfile):
            d = np.asarray(seg.depths, dtype=float)
            s = np.asarray(seg.speeds, dtype=float)
        else:
            d, s = seg
        self.source_speed = float(s[0])
        self.n_layers = int(d.size - 1)
        (
            self._dd,
            self._inv_ds,
            self._r,
            self._r2,
            self._log_sratio,
            self._sbar,
            self._iso,
            self._r2max,
        ) = _layer_statics(d, s)
        self.theta_min = math.acos(min(1.0, 1.0 / math.sqrt(self._r2max)))

    def _count(self, evaluations: int) -> None:
        global _layer_ops
        _layer_ops += self.n_layers * evaluations

    def _check_feasible(self, thetas: np.ndarray) -> None:
        # tau <= 0 at some boundary is equivalent to cos^2 >= 1 / max(r^2)
        cos2 = np.cos(thetas) ** 2
        bad = cos2 * self._r2max >= 1.0
        if bad.any():
            raise InfeasibleAngleError(
                float(thetas[np.flatnonzero(bad)[0]]), self.theta_min
            )

    def times(self, thetas, check: bool = True) -> np.ndarray:
        """Travel time through the whole segment for each launch angle."""
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        if check:
            self._check_feasible(thetas)
        self._count(thetas.size)
        out = np.empty(thetas.shape)
        _times_into(
            self._dd, self._inv_ds, self._r2, self._log_sratio, self._sbar,
            self._iso, thetas, out,
        )
        return out

    def ranges(self, thetas, check: bool = True) -> np.ndarray:
        """Horizontal range across the whole segment for each launch angle."""
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        if check:
            self._check_feasible(thetas)
        self._count(thetas.size)
        out = np.empty(thetas.shape)
        _ranges_into(
            self._dd, self._inv_ds, self._r, self._r2, self._iso,
            self.source_speed, thetas, out,
        )
        return out

    def layer_angles(self, theta0: float, check: bool = True) -> np.ndarray:
        """Grazing angle at every boundary via the Snell chain from ``theta0``."""
        cosines = self._r * math.cos(theta0)
        if check and float(cosines.max()) >= 1.0:
            raise InfeasibleAngleError(theta0, self.theta_min)
        return np.arccos(np.minimum(cosines, 1.0))

    def _bracket(self) -> tuple[float, float]:
        return max(self.theta_min + THETA_BRACKET_EPS, MIN_SOLVER_ANGLE), _HALF_PI

    def _solve_times_raw(self, targets: np.ndarray, tol: float):
        if tol <= 0:
            raise ValueError("tolerance must be positive")
        lo, hi = self._bracket()
        angles = np.empty(targets.shape)
        status = np.empty(targets.shape, dtype=np.int64)
        tally = np.zeros(1, dtype=np.int64)
        _solve_times_kernel(
            self._dd, self._inv_ds, self._r2, self._log_sratio, self._sbar,
            self._iso, targets, tol, lo, hi, MAX_BISECT_ITERATIONS,
            angles, status, tally,
        )
        self._count(int(tally[0]))
        if (status == _STATUS_NO_CONVERGENCE).any():
            raise BisectionError(
                f"bisection failed to reach tolerance {tol} within "
                f"{MAX_BISECT_ITERATIONS} iterations"
            )
        return angles, status

    def solve_times_masked(self, targets, tol: float) -> tuple[np.ndarray, np.ndarray]:
        """Launch angles whose travel times match ``targets`` within ``tol``.

        Returns ``(angles, ok)``; entries whose target lies outside the
        feasible time bracket are NaN with ``ok`` False instead of raising.
        """
        targets = np.atleast_1d(np.asarray(targets, dtype=float))
        angles, status = self._solve_times_raw(targets, tol)
        return angles, status == _STATUS_OK

    def solve_times(self, targets, tol: float) -> np.ndarray:
        """Strict version of ``solve_times_masked``: raises on infeasible targets."""
        targets = np.atleast_1d(np.asarray(targets, dtype=float))
        angles, status = self._solve_times_raw(targets, tol)
        if (status == _STATUS_UNREACHABLE).any():
            bad = float(targets[status == _STATUS_UNREACHABLE][0])
            t_min = float(self.times(np.array([self._bracket()[1]]), check=False)[0])
            raise UnreachableTimeError(
                f"target time {bad:.9f} s is below the vertical-ray minimum "
                f"{t_min:.9f} s"
            )
        if (status != _STATUS_OK).any():
            bad = float(targets[status != _STATUS_OK][0])
            raise SolveDomainError(
                f"target time {bad:.9f} s is outside the feasible range"
            )
        return angles

    def _solve_ranges_raw(self, targets: np.ndarray, tol: float):
        if tol <= 0:
            raise ValueError("tolerance must be positive")
        lo, hi = self._bracket()
        angles = np.empty(targets.shape)
        status = np.empty(targets.shape, dtype=np.int64)
        tally = np.zeros(1, dtype=np.int64)
        _solve_ranges_kernel(
            self._dd, self._inv_ds, self._r, self._r2, self._iso,
            self.source_speed, targets, tol, lo, hi, MAX_BISECT_ITERATIONS,
            angles, status, tally,
        )
        self._count(int(tally[0]))
        if (status == _STATUS_NO_CONVERGENCE).any():
            raise BisectionError(
                f"bisection failed to reach tolerance {tol} within "
                f"{MAX_BISECT_ITERATIONS} iterations"
            )
        return angles, status

    def solve_ranges_masked(self, targets, tol: float) -> tuple[np.ndarray, np.ndarray]:
        """Launch angles whose horizontal ranges match ``targets`` within ``tol``.

        Returns ``(angles, ok)`` like ``solve_times_masked``. A target of
        exactly zero returns pi/2.
        """
        targets = np.atleast_1d(np.asarray(targets, dtype=float))
        angles, status = self._solve_ranges_raw(targets, tol)
        return angles, status == _STATUS_OK

    def solve_ranges(self, targets, tol: float) -> np.ndarray:
        """Strict version of ``solve_ranges_masked``."""
        targets = np.atleast_1d(np.asarray(targets, dtype=float))
        angles, status = self._solve_ranges_raw(targets, tol)
        if (status != _STATUS_OK).any():
            bad = float(targets[status != _STATUS_OK][0])
            raise SolveDomainError(
                f"target range {bad!r} m is outside the feasible range"
            )
        return angles


def tracer_between(
    depths: np.ndarray, speeds: np.ndarray, z_source: float, z_other: float
) -> SegmentTracer:
    """Tracer for the sub-profile between two depths, source sample first.

    ``depths``/``speeds`` are the full profile's sample arrays; the segment
    endpoints are interpolated and interior samples preserved, exactly like
    building the segment profile and flipping it for up-going propagation,
    but without intermediate profile objects (this sits on the hot path).
    """
    if z_source == z_other:
        raise ProfileError(f"zero-span segment at depth {z_source}")
    z_lo, z_hi = (z_source, z_other) if z_source < z_other else (z_other, z_source)
    if z_lo < depths[0] or z_hi > depths[-1]:
        raise ProfileError(
            f"segment [{z_lo}, {z_hi}] outside profile range "
            f"[{depths[0]}, {depths[-1]}]"
        )
    def interp(z):
        j = int(np.searchsorted(depths, z, side="left"))
        if j < depths.size and depths[j] == z:
            return float(speeds[j])
        d0, d1 = depths[j - 1], depths[j]
        return float(speeds[j - 1] + (speeds[j] - speeds[j - 1]) * (z - d0) / (d1 - d0))

    i0 = int(np.searchsorted(depths, z_lo, side="right"))  # strictly inside
    i1 = int(np.searchsorted(depths, z_hi, side="left"))
    d = np.concatenate(([z_lo], depths[i0:i1], [z_hi]))
    s = np.concatenate(([interp(z_lo)], speeds[i0:i1], [interp(z_hi)]))
    if z_source > z_other:  # up-going: flip so the source comes first
        d = (z_hi - d)[::-1].copy()
        s = s[::-1].copy()
    return SegmentTracer((d, s))


def oriented_tracer(
    profile: SoundVelocityProfile, z_source: float, z_target: float
) -> SegmentTracer:
    """Tracer for the segment between two depths with the source sample first."""
    return tracer_between(
        np.asarray(profile.depths, dtype=float),
        np.asarray(profile.speeds, dtype=float),
        z_source,
        z_target,
    )


def propagation_time(seg: SoundVelocityProfile, theta0: float) -> float:
    """Signal travel time through ``seg`` launched at grazing angle ``theta0``."""
    _validate_angle(theta0)
    return float(SegmentTracer(seg).times(np.array([theta0]))[0])


def horizontal_range(seg: SoundVelocityProfile, theta0: float) -> float:
    """Horizontal distance covered across ``seg`` launched at ``theta0``."""
    _validate_angle(theta0)
    return float(SegmentTracer(seg).ranges(np.array([theta0]))[0])


def trace(seg: SoundVelocityProfile, theta0: float) -> RayTraceResult:
    """Full trace: travel time, horizontal range, and the Snell angle chain."""
    _validate_angle(theta0)
    tracer = SegmentTracer(seg)
    t = tracer.times(np.array([theta0]))
    h = tracer.ranges(np.array([theta0]), check=False)
    angles = tracer.layer_angles(theta0, check=False)
    return RayTraceResult(float(t[0]), float(h[0]), tuple(float(a) for a in angles))


def min_feasible_angle(seg: SoundVelocityProfile) -> float:
    """Infimum launch angle that traverses ``seg`` without turning.

    Zero when the source depth carries the maximum speed of the segment.
    """
    return SegmentTracer(seg).theta_min


def solve_angle_for_time(seg: SoundVelocityProfile, t_target: float, tol: float) -> float:
    """Bisection launch angle whose travel time matches ``t_target`` within ``tol``."""
    return float(SegmentTracer(seg).solve_times(np.array([t_target]), tol)[0])


def solve_angle_for_range(seg: SoundVelocityProfile, h_target: float, tol: float) -> float:
    """Bisection launch angle whose horizontal range matches ``h_target`` within ``tol``."""
    return float(SegmentTracer(seg).solve_ranges(np.array([h_target]), tol)[0])


def oracle_trace(
    seg: SoundVelocityProfile, theta0: float, step: float
) -> tuple[float, float]:
    """Micro-segment straight-ray integration of travel time and horizontal range.

    Independent numerical check of the closed forms: every layer is cut into
    depth slices of at most ``step`` metres, each slice uses the Snell grazing
    angle at its mid depth, and straight-ray time and offset accumulate. The
    sums converge to the closed forms as ``step -> 0``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _validate_angle(theta0)
    speeds = seg.speeds
    a = math.cos(theta0) / speeds[0]  # Snell invariant cos(theta)/speed
    if a * max(speeds) >= 1.0:
        raise InfeasibleAngleError(theta0, min_feasible_angle(seg))
    t = 0.0
    h = 0.0
    for (d0, s0), (d1, s1) in zip(seg.points, seg.points[1:]):
        n = max(1, math.ceil((d1 - d0) / step))
        dz = (d1 - d0) / n
        z_mid = d0 + (np.arange(n) + 0.5) * dz
        s_mid = s0 + (s1 - s0) * (z_mid - d0) / (d1 - d0)
        cos_m = a * s_mid
        sin_m = np.sqrt(1.0 - cos_m ** 2)
        t += float(np.sum(dz / (sin_m * s_mid)))
        h += float(np.sum(dz * cos_m / sin_m))
    return t, h


def oracle_path(
    seg: SoundVelocityProfile, theta0: float, step: float
) -> tuple[np.ndarray, np.ndarray]:
    """Polyline ``(depths, horizontal offsets)`` of the micro-segment integration.

    Exposes the approximate ray geometry so tests can check the per-layer arc
    property; ``oracle_trace`` returns the matching totals.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _validate_angle(theta0)
    speeds = seg.speeds
    a = math.cos(theta0) / speeds[0]
    if a * max(speeds) >= 1.0:
        raise InfeasibleAngleError(theta0, min_feasible_angle(seg))
    depths = [np.array([seg.points[0][0]])]
    offsets = [np.array([0.0])]
    h = 0.0
    for (d0, s0), (d1, s1) in zip(seg.points, seg.points[1:]):
        n = max(1, math.ceil((d1 - d0) / step))
        dz = (d1 - d0) / n
        z_mid = d0 + (np.arange(n) + 0.5) * dz
        s_mid = s0 + (s1 - s0) * (z_mid - d0) / (d1 - d0)
        cos_m = a * s_mid
        sin_m = np.sqrt(1.0 - cos_m ** 2)
        dh = dz * cos_m / sin_m
        depths.append(d0 + (np.arange(n) + 1.0) * dz)
        offsets.append(h + np.cumsum(dh))
        h += float(np.sum(dh))
    return np.concatenate(depths), np.concatenate(offsets)
