import math

import numpy as np
import pytest

from irtul.localize import (
    GeometryError,
    IrtulConfig,
    LocalizationError,
    LocalizationResult,
    Measurement,
    Position,
    horizontal_fix,
    irtul_localize,
    rough_fix,
    time_loss,
)
from irtul.raytrace import oriented_tracer
from irtul.svp import SoundVelocityProfile

TWO_LAYER = SoundVelocityProfile(((0.0, 1520.0), (1000.0, 1480.0), (3000.0, 1500.0)))
ISO_DEEP = SoundVelocityProfile(((0.0, 1500.0), (3000.0, 1500.0)))

EIGHT_REFS = [
    Position(float(x), float(y), float(z))
    for z in (0.0, 3000.0)
    for x, y in ((3000, 3000), (7000, 3000), (3000, 7000), (7000, 7000))
]


def forward_measurements(profile, refs, target, range_tol=1e-9):
    """Noiseless one-way times by the library's own forward tracer."""
    out = []
    for i, p in enumerate(refs):
        h = math.hypot(p.x - target.x, p.y - target.y)
        tracer = oriented_tracer(profile, p.z, target.z)
        angle = tracer.solve_ranges(np.array([h]), range_tol)
        t = float(tracer.times(angle, check=False)[0])
        out.append(Measurement(f"ref-{i:02d}", t, p))
    return out


def straight_measurements(refs, target, speed=1500.0, extra=0.0):
    out = []
    for i, p in enumerate(refs):
        d = math.dist((p.x, p.y, p.z), (target.x, target.y, target.z))
        out.append(Measurement(f"ref-{i:02d}", (d + extra) / speed, p))
    return out


class TestMeasurement:
    def test_positive_time_required(self):
        with pytest.raises(ValueError):
            Measurement("r", 0.0, Position(0, 0, 0))
        with pytest.raises(ValueError):
            Measurement("r", -1.0, Position(0, 0, 0))


class TestIrtulConfig:
    def test_defaults_valid(self):
        cfg = IrtulConfig()
        assert cfg.initial_depth_step == 2.0
        assert cfg.depth_step_threshold == 0.2
        assert cfg.time_tolerance == 1e-5
        assert cfg.range_tolerance == 0.1
        assert cfg.mean_speed == 1500.0
        assert cfg.max_iterations == 100

    def test_threshold_must_be_below_step(self):
        with pytest.raises(ValueError):
            IrtulConfig(initial_depth_step=0.1, depth_step_threshold=0.2)

    def test_positive_values_required(self):
        with pytest.raises(ValueError):
            IrtulConfig(time_tolerance=-1.0)


class TestRoughFix:
    REFS = [Position(0, 0, 0), Position(100, 0, 0), Position(0, 100, 0), Position(0, 0, 100)]
    TARGET = Position(25.0, 25.0, 25.0)

    def test_exact_recovery(self):
        ms = straight_measurements(self.REFS, self.TARGET)
        fix = rough_fix(ms, 1500.0)
        assert math.dist((fix.x, fix.y, fix.z), (25, 25, 25)) < 1e-6

    def test_perturbed_ranges_bounded_error(self):
        ms = straight_measurements(self.REFS, self.TARGET, extra=0.1)
        fix = rough_fix(ms, 1500.0)
        assert math.dist((fix.x, fix.y, fix.z), (25, 25, 25)) < 0.5

    def test_fewer_than_four_rejected(self):
        ms = straight_measurements(self.REFS, self.TARGET)
        with pytest.raises(ValueError):
            rough_fix(ms[:3], 1500.0)

    def test_coplanar_references_rejected(self):
        refs = [Position(x, y, 0.0) for x, y in ((0, 0), (100, 0), (0, 100), (100, 100))]
        ms = straight_measurements(refs, Position(50, 50, 40))
        with pytest.raises(GeometryError):
            rough_fix(ms, 1500.0)


class TestHorizontalFix:
    POS = [Position(0, 0, 0), Position(10, 0, 0), Position(0, 10, 0), Position(10, 10, 0)]

    def test_symmetric_center(self):
        h = [math.sqrt(50)] * 4
        x, y = horizontal_fix(list(zip(self.POS, h)))
        assert (x, y) == pytest.approx((5.0, 5.0), abs=1e-9)

    def test_consistent_ranges_exact(self):
        h = [5.0, math.sqrt(65), math.sqrt(45), math.sqrt(85)]
        x, y = horizontal_fix(list(zip(self.POS, h)))
        assert (x, y) == pytest.approx((3.0, 4.0), abs=1e-9)

    def test_collinear_references_rejected(self):
        pos = [Position(x, 0, 0) for x in (0, 10, 20, 30)]
        with pytest.raises(GeometryError):
            horizontal_fix(list(zip(pos, [5.0, 6.0, 7.0, 8.0])))

    def test_fewer_than_four_rejected(self):
        with pytest.raises(ValueError):
            horizontal_fix(list(zip(self.POS[:3], [1.0, 2.0, 3.0])))

    def test_residual_scaled_small(self, rng):
        # consistent inputs leave essentially zero least-squares residual
        for _ in range(20):
            refs = [
                Position(float(x), float(y), 0.0)
                for x, y in rng.uniform(0, 10000, (6, 2))
            ]
            tx, ty = rng.uniform(2000, 8000, 2)
            h = [math.hypot(p.x - tx, p.y - ty) for p in refs]
            x, y = horizontal_fix(list(zip(refs, h)))
            a = np.array(
                [
                    (p.x ** 2 - refs[0].x ** 2)
                    + (p.y ** 2 - refs[0].y ** 2)
                    + h[0] ** 2
                    - hi ** 2
                    for p, hi in zip(refs[1:], h[1:])
                ]
            )
            b = np.array([[2 * (p.x - refs[0].x), 2 * (p.y - refs[0].y)] for p in refs[1:]])
            resid = np.linalg.norm(a - b @ np.array([x, y]))
            assert resid / max(1.0, np.linalg.norm(a)) < 1e-9


class TestTimeLoss:
    def test_identical_zero(self):
        assert time_loss([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_hand_sum(self):
        assert time_loss([1.0, 2.0], [1.1, 1.9]) == pytest.approx(0.02, abs=1e-15)

    def test_pairing_is_positional(self):
        assert time_loss([1.0, 2.0], [2.0, 1.0]) != 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            time_loss([1.0], [1.0, 2.0])


class TestIrtulLocalize:
    TARGET = Position(5000.0, 5000.0, 1200.0)

    def test_noiseless_self_consistency(self):
        ms = forward_measurements(TWO_LAYER, EIGHT_REFS, self.TARGET)
        res = irtul_localize(TWO_LAYER, ms)
        err = math.dist(
            (res.position.x, res.position.y, res.position.z),
            (self.TARGET.x, self.TARGET.y, self.TARGET.z),
        )
        assert err < 0.5
        assert res.converged
        assert res.iterations <= 100

    def test_isovelocity_reduces_to_rough_fix(self):
        ms = straight_measurements(EIGHT_REFS, self.TARGET)
        cfg = IrtulConfig(time_tolerance=1e-9, range_tolerance=1e-6)
        res = irtul_localize(ISO_DEEP, ms, cfg)
        ref = rough_fix(ms, 1500.0)
        assert abs(res.position.x - ref.x) < 1e-3
        assert abs(res.position.y - ref.y) < 1e-3
        assert abs(res.position.z - ref.z) < 1e-3

    def test_accepted_loss_monotone_and_history_consistent(self):
        ms = forward_measurements(TWO_LAYER, EIGHT_REFS, self.TARGET)
        res = irtul_localize(TWO_LAYER, ms)
        assert len(res.loss_history) == res.iterations
        accepted = [min(a, b) for a, b in res.loss_history]
        assert all(b <= a + 1e-18 for a, b in zip(accepted, accepted[1:]))
        assert all(a >= 0 and b >= 0 for a, b in res.loss_history)

    def test_fewer_than_four_measurements_rejected(self):
        ms = forward_measurements(TWO_LAYER, EIGHT_REFS, self.TARGET)
        with pytest.raises(ValueError):
            irtul_localize(TWO_LAYER, ms[:3])

    def test_reference_outside_profile_rejected(self):
        ms = forward_measurements(TWO_LAYER, EIGHT_REFS, self.TARGET)
        bad = Measurement("bad", 1.0, Position(5000.0, 5000.0, 3500.0))
        with pytest.raises(ValueError):
            irtul_localize(TWO_LAYER, ms + [bad])

    def test_infeasible_reference_dropped_when_enough_remain(self):
        ms = forward_measurements(TWO_LAYER, EIGHT_REFS, self.TARGET)
        # a time shorter than any possible ray from this reference
        bad = Measurement("bad", 1e-4, Position(5200.0, 5200.0, 0.0))
        res = irtul_localize(TWO_LAYER, ms + [bad])
        err = math.dist(
            (res.position.x, res.position.y, res.position.z),
            (self.TARGET.x, self.TARGET.y, self.TARGET.z),
        )
        assert err < 0.5
        assert res.converged

    def test_infeasible_reference_fatal_with_only_four(self):
        # two buoys and two anchors, chosen so the differenced system has
        # full rank; breaking one measurement leaves fewer than 4 usable
        refs = [
            Position(3000.0, 3000.0, 0.0),
            Position(7000.0, 3000.0, 0.0),
            Position(7000.0, 7000.0, 3000.0),
            Position(3000.0, 5200.0, 3000.0),
        ]
        ms = forward_measurements(TWO_LAYER, refs, self.TARGET)
        broken = [
            Measurement(ms[0].reference, 1e-4, ms[0].reference_position),
            *ms[1:],
        ]
        with pytest.raises(LocalizationError) as exc_info:
            irtul_localize(TWO_LAYER, broken)
        assert exc_info.value.state is not None
        assert exc_info.value.state.iteration >= 1

    def test_depth_clamped_into_profile(self):
        # near-surface target: the down-refracting surface layer keeps direct
        # rays from distant buoys out, so the buoys sit close by; depth tuning
        # steps that would cross the surface must stay inside the profile
        target = Position(5000.0, 5000.0, 4.0)
        refs = [
            Position(float(x), float(y), 0.0)
            for x, y in ((4700, 4700), (5300, 4700), (4700, 5300), (5300, 5300))
        ] + [
            Position(float(x), float(y), 3000.0)
            for x, y in ((3000, 3000), (7000, 3000), (3000, 7000), (7000, 7000))
        ]
        ms = forward_measurements(TWO_LAYER, refs, target)
        res = irtul_localize(TWO_LAYER, ms)
        assert 0.0 < res.position.z < 3000.0
        err = math.dist(
            (res.position.x, res.position.y, res.position.z),
            (target.x, target.y, target.z),
        )
        assert err < 0.5

    def test_near_bottom_target_converges(self):
        # the estimate can get pinned at the bottom clamp with the tuning
        # direction pointing into the seabed; the search must turn around
        # rather than spin on the boundary
        target = Position(5000.0, 5000.0, 2996.0)
        refs = [
            Position(4300.0, 4300.0, 0.0),
            Position(5700.0, 4300.0, 0.0),
            Position(4300.0, 5700.0, 0.0),
            Position(5700.0, 5700.0, 0.0),
            Position(4900.0, 4950.0, 3000.0),
            Position(5100.0, 5050.0, 3000.0),
        ]
        ms = forward_measurements(TWO_LAYER, refs, target)
        res = irtul_localize(TWO_LAYER, ms)
        assert res.converged
        err = math.dist(
            (res.position.x, res.position.y, res.position.z),
            (target.x, target.y, target.z),
        )
        assert err < 0.5

    def test_self_consistency_random_geometries(self, rng):
        for _ in range(5):
            target = Position(
                float(rng.uniform(3000, 7000)),
                float(rng.uniform(3000, 7000)),
                float(rng.uniform(300, 2700)),
            )
            refs = [
                Position(float(x), float(y), float(z))
                for z in (0.0, 3000.0)
                for x, y in rng.uniform(2000, 8000, (3, 2))
            ]
            ms = forward_measurements(TWO_LAYER, refs, target)
            res = irtul_localize(TWO_LAYER, ms)
            err = math.dist(
                (res.position.x, res.position.y, res.position.z),
                (target.x, target.y, target.z),
            )
            assert err < 0.5
            assert res.iterations <= 100

    def test_result_is_plain_value(self):
        ms = forward_measurements(TWO_LAYER, EIGHT_REFS, self.TARGET)
        res = irtul_localize(TWO_LAYER, ms)
        assert isinstance(res, LocalizationResult)
        assert isinstance(res.loss_history, tuple)
