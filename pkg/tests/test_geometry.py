import math

import pytest
from hypothesis import given, strategies as st

from compnav.geometry import (
    CircleObstacle,
    EnvironmentMap,
    MalformedRegion,
    PoseRegion,
    RectObstacle,
    angle_distance,
    wrap_angle,
)


class TestWrapAngle:
    def test_identity_in_range(self):
        assert wrap_angle(0.5) == 0.5
        assert wrap_angle(math.pi) == math.pi

    def test_boundary_maps_to_positive_pi(self):
        assert wrap_angle(-math.pi) == math.pi
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)

    @given(st.floats(-1000.0, 1000.0))
    def test_always_in_half_open_interval(self, theta):
        w = wrap_angle(theta)
        assert -math.pi < w <= math.pi

    @given(st.floats(-100.0, 100.0))
    def test_wrap_preserves_angle_mod_two_pi(self, theta):
        w = wrap_angle(theta)
        assert math.isclose(
            math.cos(w), math.cos(theta), abs_tol=1e-9
        ) and math.isclose(math.sin(w), math.sin(theta), abs_tol=1e-9)


class TestPoseRegion:
    def test_malformed_radius(self):
        with pytest.raises(MalformedRegion):
            PoseRegion(0, 0, 0.0, 0, 0.4)
        with pytest.raises(MalformedRegion):
            PoseRegion(0, 0, -1.0, 0, 0.4)

    def test_malformed_tolerance(self):
        with pytest.raises(MalformedRegion):
            PoseRegion(0, 0, 1.0, 0, 0.0)
        with pytest.raises(MalformedRegion):
            PoseRegion(0, 0, 1.0, 0, 3.5)

    def test_membership_closed_boundary(self):
        r = PoseRegion(0, 0, 1.0, 0.0, 0.4)
        assert r.contains_pose(1.0, 0.0, 0.4)
        assert not r.contains_pose(1.0 + 1e-6, 0.0, 0.0)
        assert not r.contains_pose(0.0, 0.0, 0.4 + 1e-6)

    def test_membership_wraps_heading(self):
        r = PoseRegion(0, 0, 1.0, math.pi, 0.3)
        assert r.contains_pose(0, 0, -math.pi + 0.1)

    def test_containment_example(self):
        # dist 0 + 1.0 <= 3.0 and [-0.4, 0.4] inside [-0.5, 0.5]
        exit_1 = PoseRegion(10, 0, 1.0, 0.0, 0.4)
        entry_2 = PoseRegion(10, 0, 3.0, 0.0, 0.5)
        assert entry_2.contains_region(exit_1)
        assert not exit_1.contains_region(entry_2)

    def test_overlap_neither_contained_nor_disjoint(self):
        exit_1 = PoseRegion(10, 0, 1.0, 0.0, 0.4)
        entry_2 = PoseRegion(13, 0, 3.0, 0.0, 0.5)
        assert not entry_2.contains_region(exit_1)  # 3 + 1 > 3
        assert not entry_2.disjoint_from(exit_1)  # 3 < 1 + 3

    def test_disjoint_by_distance(self):
        a = PoseRegion(0, 0, 1.0, 0.0, 0.4)
        b = PoseRegion(5, 0, 1.0, 0.0, 0.4)
        assert a.disjoint_from(b) and b.disjoint_from(a)

    def test_disjoint_by_heading(self):
        a = PoseRegion(0, 0, 1.0, 0.0, 0.3)
        b = PoseRegion(0, 0, 1.0, math.pi, 0.3)
        assert a.disjoint_from(b)

    def test_heading_containment_wraps(self):
        outer = PoseRegion(0, 0, 2.0, math.pi, 0.5)
        inner = PoseRegion(0, 0, 1.0, -math.pi + 0.1, 0.3)
        assert outer.contains_region(inner)

    def test_equality_tolerance(self):
        a = PoseRegion(1.0, 2.0, 3.0, 0.1, 0.4)
        b = PoseRegion(1.0 + 5e-10, 2.0, 3.0, 0.1, 0.4)
        c = PoseRegion(1.1, 2.0, 3.0, 0.1, 0.4)
        assert a.equals(b)
        assert not a.equals(c)


class TestAngleDistance:
    @given(st.floats(-10.0, 10.0), st.floats(-10.0, 10.0))
    def test_symmetric_and_bounded(self, a, b):
        d = angle_distance(a, b)
        assert 0.0 <= d <= math.pi
        assert d == angle_distance(b, a)


class TestEnvironmentMap:
    def setup_method(self):
        self.env = EnvironmentMap(
            RectObstacle(0, 0, 20, 10),
            (RectObstacle(8, 4, 12, 6), CircleObstacle(16, 2, 1.0)),
            robot_radius=0.5,
        )

    def test_free_space(self):
        assert not self.env.collides(4.0, 2.0)

    def test_rect_hit_includes_robot_radius(self):
        assert self.env.collides(7.6, 5.0)  # 0.4 m from the rect face
        assert not self.env.collides(7.4, 5.0)

    def test_circle_hit(self):
        assert self.env.collides(16.0, 3.4)
        assert not self.env.collides(16.0, 3.6)

    def test_bounds_exit(self):
        assert self.env.collides(0.4, 5.0)
        assert self.env.collides(19.7, 5.0)

    def test_obstacle_outside_bounds_rejected(self):
        with pytest.raises(ValueError):
            EnvironmentMap(
                RectObstacle(0, 0, 10, 10), (CircleObstacle(10, 5, 2.0),), 0.5
            )
