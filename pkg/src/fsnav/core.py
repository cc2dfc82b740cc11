"""Planar geometry primitives shared by every layer of the stack.

Conventions (fixed once, globally): angles are radians, counter-clockwise
positive, wrapped into the half-open interval (-pi, pi]; the world frame is
right-handed with x forward at heading 0; no reverse driving, so speeds are
non-negative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]. Raises on non-finite input."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    r = math.remainder(theta, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def normalize_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorised wrap into (-pi, pi]."""
    r = np.remainder(np.asarray(theta, dtype=float) + np.pi, TWO_PI) - np.pi
    return np.where(r == -np.pi, np.pi, r)


@dataclass(frozen=True)
class Pose2D:
    """SE(2) pose; theta is normalized into (-pi, pi] on construction."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def compose(self, other: "Pose2D") -> "Pose2D":
        """self (+) other, with `other` expressed in self's frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def inverse(self) -> "Pose2D":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def delta_to(self, other: "Pose2D") -> "Pose2D":
        """The pose of `other` expressed in self's frame: inv(self) (+) other."""
        return self.inverse().compose(other)

    def transform(self, x: float, y: float) -> tuple[float, float]:
        """Local point -> world frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return self.x + c * x - s * y, self.y + s * x + c * y

    def inverse_transform(self, x: float, y: float) -> tuple[float, float]:
        """World point -> this pose's local frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx, dy = x - self.x, y - self.y
        return c * dx + s * dy, -s * dx + c * dy

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


def pose_compose(a: Pose2D, b: Pose2D) -> Pose2D:
    """SE(2) composition a (+) b (b in a's frame)."""
    return a.compose(b)


class ConeColor(Enum):
    BLUE = "blue"
    YELLOW = "yellow"
    ORANGE_LARGE = "orange_large"


@dataclass(frozen=True)
class Cone:
    x: float
    y: float
    color: ConeColor

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "color": self.color.value}

    @classmethod
    def from_dict(cls, d: dict) -> "Cone":
        return cls(float(d["x"]), float(d["y"]), ConeColor(d["color"]))


@dataclass
class VehicleState:
    """Full kinematic state of the car: planar pose plus longitudinal motion."""

    pose: Pose2D = field(default_factory=Pose2D)
    v: float = 0.0        # longitudinal speed, m/s (>= 0, no reverse)
    omega: float = 0.0    # yaw rate, rad/s
    a: float = 0.0        # longitudinal acceleration, m/s^2
    steer: float = 0.0    # front steering angle, rad


# Column layout of PathPlan.pts
PATH_X, PATH_Y, PATH_HEADING, PATH_CURVATURE, PATH_SPEED = range(5)


@dataclass
class PathPlan:
    """Ordered waypoints with heading, curvature (1/m) and target speed.

    `pts` is an (N, 5) float array with columns x, y, heading, curvature,
    target_speed. Consecutive points are at most `max_step` apart; a closed
    plan additionally connects its last point back to the first.
    """

    pts: np.ndarray
    closed: bool = False
    max_step: float = 0.25

    def __post_init__(self):
        self.pts = np.asarray(self.pts, dtype=float)
        if self.pts.ndim != 2 or self.pts.shape[1] != 5:
            raise ValueError("path points must be an (N, 5) array")

    def __len__(self) -> int:
        return len(self.pts)

    @property
    def xy(self) -> np.ndarray:
        return self.pts[:, :2]

    @property
    def headings(self) -> np.ndarray:
        return self.pts[:, PATH_HEADING]

    @property
    def curvatures(self) -> np.ndarray:
        return self.pts[:, PATH_CURVATURE]

    @property
    def speeds(self) -> np.ndarray:
        return self.pts[:, PATH_SPEED]

    def segment_lengths(self) -> np.ndarray:
        """Lengths of consecutive segments (including the closing one if closed)."""
        xy = self.xy
        if self.closed:
            nxt = np.roll(xy, -1, axis=0)
        else:
            nxt = xy[1:]
            xy = xy[:-1]
        return np.hypot(nxt[:, 0] - xy[:, 0], nxt[:, 1] - xy[:, 1])

    def total_length(self) -> float:
        return float(self.segment_lengths().sum())

    def arc_positions(self) -> np.ndarray:
        """Cumulative arc length at each point (starting at 0)."""
        seg = self.segment_lengths()
        n = len(self.pts)
        s = np.zeros(n)
        s[1:] = np.cumsum(seg[: n - 1])
        return s

    def validate(self) -> None:
        """Raise ValueError if any PathPlan invariant is violated."""
        if len(self.pts) < 2:
            raise ValueError("path needs at least 2 points")
        if not np.all(np.isfinite(self.pts)):
            raise ValueError("path contains non-finite values")
        seg = self.segment_lengths()
        if seg.size and float(seg.max()) > self.max_step + 1e-9:
            raise ValueError(
                f"segment of {seg.max():.3f} m exceeds max step {self.max_step} m"
            )
