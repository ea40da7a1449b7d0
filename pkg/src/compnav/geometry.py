"""Planar pose regions and environment geometry.

Regions are pose-tolerance balls: a disc in (x, y) crossed with a wrapped
heading interval.  All membership, containment and disjointness tests are
closed-form, so subtask composability can be decided exactly from authored
configs.  Boundary semantics are closed (<=), with a small absolute slack
EPS so that regions computed from identical literals compare as expected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

TWO_PI = 2.0 * math.pi

# Absolute slack for geometric comparisons on authored configs.
EPS = 1e-9


class MalformedRegion(ValueError):
    """A pose region with a non-positive radius or heading tolerance."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    t = math.fmod(theta, TWO_PI)
    if t <= -math.pi:
        t += TWO_PI
    elif t > math.pi:
        t -= TWO_PI
    return t


def angle_distance(a: float, b: float) -> float:
    """Absolute wrapped distance between two angles, in [0, pi]."""
    return abs(wrap_angle(a - b))


@dataclass(frozen=True)
class PoseRegion:
    """Disc around (center_x, center_y) crossed with a heading interval.

    A pose (x, y, theta) is a member iff its Euclidean distance to the
    center is <= position_radius and its wrapped angular distance to
    `heading` is <= heading_tolerance.
    """

    center_x: float
    center_y: float
    position_radius: float
    heading: float
    heading_tolerance: float

    def __post_init__(self):
        if not (self.position_radius > 0.0):
            raise MalformedRegion(f"position_radius must be > 0, got {self.position_radius}")
        if not (0.0 < self.heading_tolerance <= math.pi):
            raise MalformedRegion(
                f"heading_tolerance must be in (0, pi], got {self.heading_tolerance}"
            )
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    def contains_pose(self, x: float, y: float, theta: float) -> bool:
        dx = x - self.center_x
        dy = y - self.center_y
        if math.hypot(dx, dy) > self.position_radius:
            return False
        return angle_distance(theta, self.heading) <= self.heading_tolerance

    def contains_region(self, other: "PoseRegion") -> bool:
        """True iff `other` is contained in this region.

        Disc containment: dist(centers) + r_other <= r_self.  Heading
        interval containment under wrapping: |wrap(h_other - h_self)| +
        tol_other <= tol_self.
        """
        d = math.hypot(other.center_x - self.center_x, other.center_y - self.center_y)
        if d + other.position_radius > self.position_radius + EPS:
            return False
        gap = angle_distance(other.heading, self.heading)
        return gap + other.heading_tolerance <= self.heading_tolerance + EPS

    def disjoint_from(self, other: "PoseRegion") -> bool:
        """True iff the two regions share no pose.

        Disjoint when the discs are separated (dist >= r1 + r2) or the
        heading intervals are separated under wrapping.
        """
        d = math.hypot(other.center_x - self.center_x, other.center_y - self.center_y)
        if d >= self.position_radius + other.position_radius - EPS:
            return True
        gap = angle_distance(other.heading, self.heading)
        return gap >= self.heading_tolerance + other.heading_tolerance - EPS

    def equals(self, other: "PoseRegion") -> bool:
        """Exact field equality with EPS float tolerance (authored configs)."""
        return (
            abs(self.center_x - other.center_x) <= EPS
            and abs(self.center_y - other.center_y) <= EPS
            and abs(self.position_radius - other.position_radius) <= EPS
            and angle_distance(self.heading, other.heading) <= EPS
            and abs(self.heading_tolerance - other.heading_tolerance) <= EPS
        )


@dataclass(frozen=True)
class RectObstacle:
    """Axis-aligned rectangle given by min/max corners."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError("rectangle corners out of order")


@dataclass(frozen=True)
class CircleObstacle:
    center_x: float
    center_y: float
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("circle radius must be > 0")


@dataclass(frozen=True)
class EnvironmentMap:
    """Workspace rectangle plus static obstacles for a disc-shaped robot."""

    bounds: RectObstacle
    obstacles: tuple = field(default_factory=tuple)
    robot_radius: float = 0.5

    def __post_init__(self):
        if self.robot_radius <= 0.0:
            raise ValueError("robot_radius must be > 0")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        b = self.bounds
        for ob in self.obstacles:
            if isinstance(ob, RectObstacle):
                inside = (
                    ob.x_min >= b.x_min and ob.x_max <= b.x_max
                    and ob.y_min >= b.y_min and ob.y_max <= b.y_max
                )
            elif isinstance(ob, CircleObstacle):
                inside = (
                    ob.center_x - ob.radius >= b.x_min
                    and ob.center_x + ob.radius <= b.x_max
                    and ob.center_y - ob.radius >= b.y_min
                    and ob.center_y + ob.radius <= b.y_max
                )
            else:
                raise TypeError(f"unsupported obstacle type {type(ob)!r}")
            if not inside:
                raise ValueError(f"obstacle {ob} extends outside bounds")

    def collides(self, x: float, y: float) -> bool:
        """True iff the robot disc at (x, y) hits an obstacle or exits bounds."""
        r = self.robot_radius
        b = self.bounds
        if x - r < b.x_min or x + r > b.x_max or y - r < b.y_min or y + r > b.y_max:
            return True
        for ob in self.obstacles:
            if isinstance(ob, RectObstacle):
                cx = min(max(x, ob.x_min), ob.x_max)
                cy = min(max(y, ob.y_min), ob.y_max)
                if (x - cx) ** 2 + (y - cy) ** 2 <= r * r:
                    return True
            else:
                dx = x - ob.center_x
                dy = y - ob.center_y
                rr = r + ob.radius
                if dx * dx + dy * dy <= rr * rr:
                    return True
        return False
