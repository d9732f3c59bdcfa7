"""Piecewise-linear sound velocity profiles.

A profile is an ordered sequence of ``(depth_m, speed_mps)`` samples. Between
samples the sound speed varies linearly with depth, so the water column is a
stack of constant-gradient layers. Profiles are immutable values and safe to
share read-only across threads.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO


class ProfileError(ValueError):
    """Malformed profile data or an out-of-range profile query."""


@dataclass(frozen=True)
class SoundVelocityProfile:
    """Sound speed samples ordered by strictly increasing depth."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        pts = tuple((float(d), float(s)) for d, s in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise ProfileError("a profile needs at least 2 samples")
        for (d0, _), (d1, _) in zip(pts, pts[1:]):
            if d1 <= d0:
                raise ProfileError(
                    f"depths must be strictly increasing (got {d0} followed by {d1})"
                )
        if any(s <= 0.0 for _, s in pts):
            raise ProfileError("sound speeds must be strictly positive")

    @property
    def depths(self) -> tuple[float, ...]:
        return tuple(d for d, _ in self.points)

    @property
    def speeds(self) -> tuple[float, ...]:
        return tuple(s for _, s in self.points)

    @property
    def depth_min(self) -> float:
        return self.points[0][0]

    @property
    def depth_max(self) -> float:
        return self.points[-1][0]

    def flipped(self) -> "SoundVelocityProfile":
        """Mirror the profile so the deepest sample comes first, depth re-zeroed.

        Used for tracing up-going signals: a traced segment always starts at
        the source, and travel time and horizontal range are invariant under
        this reversal (reciprocity).
        """
        bottom = self.points[-1][0]
        return SoundVelocityProfile(
            tuple((bottom - d, s) for d, s in reversed(self.points))
        )


def _numeric(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def parse_profile(stream: str | IO[str]) -> SoundVelocityProfile:
    """Parse a two-column ``depth_m,speed_mps`` CSV into a profile.

    A non-numeric first row is treated as a header. Rows are normalized to
    increasing depth; duplicate depths are rejected.
    """
    text = stream if isinstance(stream, str) else stream.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if any(c.strip() for c in r)]
    if rows and not all(_numeric(c) for c in rows[0]):
        rows = rows[1:]
    points = []
    for row in rows:
        if len(row) != 2:
            raise ProfileError(f"expected 2 columns, got {len(row)}: {row!r}")
        try:
            points.append((float(row[0]), float(row[1])))
        except ValueError:
            raise ProfileError(f"malformed row: {row!r}") from None
    points.sort(key=lambda p: p[0])
    for (d0, _), (d1, _) in zip(points, points[1:]):
        if d0 == d1:
            raise ProfileError(f"duplicate depth {d0}")
    return SoundVelocityProfile(tuple(points))


def load_profile(path: str | Path) -> SoundVelocityProfile:
    return parse_profile(Path(path).read_text(encoding="utf-8"))


def dump_profile(profile: SoundVelocityProfile) -> str:
    """Serialize a profile back to headerless two-column CSV."""
    return "".join(f"{d:.10g},{s:.10g}\n" for d, s in profile.points)


def speed_at(profile: SoundVelocityProfile, depth: float) -> float:
    """Linearly interpolated sound speed at ``depth``; exact at the samples."""
    pts = profile.points
    if depth < pts[0][0] or depth > pts[-1][0]:
        raise ProfileError(
            f"depth {depth} outside profile range [{pts[0][0]}, {pts[-1][0]}]"
        )
    depths = [d for d, _ in pts]
    i = bisect.bisect_left(depths, depth)
    if i < len(pts) and depths[i] == depth:
        return pts[i][1]
    (d0, s0), (d1, s1) = pts[i - 1], pts[i]
    return s0 + (s1 - s0) * (depth - d0) / (d1 - d0)


def segment(profile: SoundVelocityProfile, z_a: float, z_b: float) -> SoundVelocityProfile:
    """Sub-profile between two depths, endpoint speeds interpolated.

    The result runs from ``min(z_a, z_b)`` to ``max(z_a, z_b)`` and keeps all
    original samples strictly between the endpoints. Propagation direction is
    the caller's bookkeeping (see ``SoundVelocityProfile.flipped``).
    """
    if z_a == z_b:
        raise ProfileError(f"zero-span segment at depth {z_a}")
    z_lo, z_hi = min(z_a, z_b), max(z_a, z_b)
    pts = [(z_lo, speed_at(profile, z_lo))]
    pts.extend(p for p in profile.points if z_lo < p[0] < z_hi)
    pts.append((z_hi, speed_at(profile, z_hi)))
    return SoundVelocityProfile(tuple(pts))


@dataclass(frozen=True)
class SimplificationControl:
    """Stop rule for profile simplification.

    Exactly one of ``point_count`` (total points to keep, >= 2) or
    ``rmse_threshold`` (target speed RMSE in m/s, > 0) must be set.
    """

    point_count: int | None = None
    rmse_threshold: float | None = None

    def __post_init__(self) -> None:
        if (self.point_count is None) == (self.rmse_threshold is None):
            raise ValueError("set exactly one of point_count / rmse_threshold")
        if self.point_count is not None and self.point_count < 2:
            raise ValueError("point_count must be at least 2")
        if self.rmse_threshold is not None and self.rmse_threshold <= 0:
            raise ValueError("rmse_threshold must be positive")


DEFAULT_SIMPLIFICATION = SimplificationControl(point_count=8)


def profile_rmse(original: SoundVelocityProfile, simplified: SoundVelocityProfile) -> float:
    """Root-mean-square speed error of ``simplified`` at the original sample depths."""
    if (
        simplified.depth_min > original.depth_min
        or simplified.depth_max < original.depth_max
    ):
        raise ProfileError("simplified profile does not cover the original depth range")
    sq = [(s - speed_at(simplified, d)) ** 2 for d, s in original.points]
    return math.sqrt(sum(sq) / len(sq))


def _span_sse(pts, a: int, b: int) -> float:
    """Squared speed deviation of samples strictly inside span (a, b) from its chord."""
    (d0, s0), (d1, s1) = pts[a], pts[b]
    slope = (s1 - s0) / (d1 - d0)
    return sum((pts[j][1] - (s0 + slope * (pts[j][0] - d0))) ** 2 for j in range(a + 1, b))


def simplify_dm_eicps(
    profile: SoundVelocityProfile,
    control: SimplificationControl = DEFAULT_SIMPLIFICATION,
) -> SoundVelocityProfile:
    """Greedy feature-point simplification by maximum distance reduction (DM-EICPS).

    Starting from the two endpoints, each round promotes the input sample with
    the largest speed-axis deviation from the current simplified curve; if
    interpolating through that sample would increase the total squared
    deviation (possible on curves whose deviation changes sign within a span),
    the sample whose addition reduces it the most is promoted instead. Ties
    break toward smaller depth. Rounds continue until the requested point
    count is reached or the RMSE against the original samples falls below the
    threshold. The output points are always a subset of the input points and
    include both endpoints.
    """
    pts = profile.points
    n = len(pts)
    if control.point_count is not None and control.point_count > n:
        raise ProfileError(
            f"requested {control.point_count} points but profile has only {n}"
        )
    selected = [0, n - 1]
    while True:
        current = SoundVelocityProfile(tuple(pts[i] for i in selected))
        if control.point_count is not None:
            if len(selected) >= control.point_count:
                return current
        elif profile_rmse(profile, current) < control.rmse_threshold:
            return current
        if len(selected) == n:
            return current
        far_i, far_dev = -1, -1.0
        far_delta = math.inf
        min_i, min_delta = -1, math.inf
        for a, b in zip(selected, selected[1:]):
            if b - a < 2:
                continue
            base = _span_sse(pts, a, b)
            (d0, s0), (d1, s1) = pts[a], pts[b]
            slope = (s1 - s0) / (d1 - d0)
            for i in range(a + 1, b):
                dev = abs(pts[i][1] - (s0 + slope * (pts[i][0] - d0)))
                delta = _span_sse(pts, a, i) + _span_sse(pts, i, b) - base
                if dev > far_dev:
                    far_i, far_dev, far_delta = i, dev, delta
                if delta < min_delta:
                    min_i, min_delta = i, delta
        bisect.insort(selected, far_i if far_delta <= 0.0 else min_i)
