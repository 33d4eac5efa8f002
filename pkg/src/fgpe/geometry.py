"""SE(2) pose algebra and the range-bearing sensor model.

Poses are stored as ``(x, y, theta)`` triples; every operation returns a pose
whose heading is wrapped into ``(-pi, pi]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
DEGENERATE_DISTANCE = 1e-9


class DegenerateGeometry(ValueError):
    """Observer and target coincide, so the bearing is undefined."""


def wrap_angle(t: float) -> float:
    """Wrap an angle into ``(-pi, pi]``."""
    r = math.remainder(t, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def wrap_angles(t: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    r = np.remainder(np.asarray(t, dtype=float) + math.pi, TWO_PI) - math.pi
    return np.where(r <= -math.pi, r + TWO_PI, r)


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance(self, other: "Point2") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @property
    def position(self) -> Point2:
        return Point2(self.x, self.y)

    def matrix(self) -> np.ndarray:
        """Homogeneous 3x3 transform."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])

    def compose(self, other: "Pose2") -> "Pose2":
        return compose(self, other)

    def between(self, other: "Pose2") -> "Pose2":
        return between(self, other)

    def transform_from(self, p: Point2) -> Point2:
        """Map a body-frame point into the world frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Point2(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)


@dataclass(frozen=True)
class RangeBearing:
    range: float
    bearing: float

    def __post_init__(self):
        if self.range < 0:
            raise ValueError(f"negative range {self.range}")
        object.__setattr__(self, "bearing", wrap_angle(float(self.bearing)))

    def as_array(self) -> np.ndarray:
        return np.array([self.range, self.bearing])


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Apply ``b`` expressed in ``a``'s frame."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def between(a: Pose2, b: Pose2) -> Pose2:
    """Relative pose ``d`` with ``compose(a, d) == b``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


def _delta(observer: Pose2, target: Point2) -> tuple[float, float, float]:
    dx, dy = target.x - observer.x, target.y - observer.y
    r = math.hypot(dx, dy)
    if r <= DEGENERATE_DISTANCE:
        raise DegenerateGeometry(
            f"observer ({observer.x:.6g}, {observer.y:.6g}) coincides with target"
        )
    return dx, dy, r


def range_bearing(observer: Pose2, target: Point2) -> RangeBearing:
    dx, dy, r = _delta(observer, target)
    return RangeBearing(r, math.atan2(dy, dx) - observer.theta)


def range_bearing_jacobians(observer: Pose2, target: Point2) -> tuple[np.ndarray, np.ndarray]:
    """Partials of ``(range, bearing)`` w.r.t. observer ``(x, y, theta)`` and target ``(x, y)``."""
    dx, dy, r = _delta(observer, target)
    r2 = r * r
    d_obs = np.array([[-dx / r, -dy / r, 0.0], [dy / r2, -dx / r2, -1.0]])
    d_tgt = np.array([[dx / r, dy / r], [-dy / r2, dx / r2]])
    return d_obs, d_tgt
