"""Velocity commands and the unicycle motion model shared by all robots."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fgpe.geometry import Pose2, wrap_angle, wrap_angles


@dataclass(frozen=True)
class Command:
    v: float
    omega: float

    def clipped(self, v_max: float, omega_max: float) -> "Command":
        return Command(min(max(self.v, -v_max), v_max), min(max(self.omega, -omega_max), omega_max))

    def within(self, v_max: float, omega_max: float) -> bool:
        return abs(self.v) <= v_max and abs(self.omega) <= omega_max


STOP = Command(0.0, 0.0)


def unicycle(pose: Pose2, v: float, omega: float, dt: float) -> Pose2:
    """One explicit Euler step: position moves along the current heading."""
    return Pose2(
        pose.x + v * math.cos(pose.theta) * dt,
        pose.y + v * math.sin(pose.theta) * dt,
        wrap_angle(pose.theta + omega * dt),
    )


def unicycle_rollouts(x0: float, y0: float, th0: float, v: np.ndarray, omega: np.ndarray,
                      dt: float, steps: int) -> np.ndarray:
    """Integrate many constant commands at once; returns (n, steps, 3) poses after each step."""
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    out = np.empty((v.size, steps, 3))
    x = np.full(v.size, float(x0))
    y = np.full(v.size, float(y0))
    th = np.full(v.size, float(th0))
    for k in range(steps):
        x = x + v * np.cos(th) * dt
        y = y + v * np.sin(th) * dt
        th = wrap_angles(th + omega * dt)
        out[:, k, 0], out[:, k, 1], out[:, k, 2] = x, y, th
    return out


def steer_toward(pose: Pose2, tx: float, ty: float, gain: float, v_max: float,
                 omega_max: float) -> Command:
    """Proportional heading controller toward a point: omega = clip(gain * bearing error), v = v_max.

    The bearing error lies in (-pi, pi]; a target directly behind gives +omega_max.
    """
    err = wrap_angle(math.atan2(ty - pose.y, tx - pose.x) - pose.theta)
    return Command(v_max, min(max(gain * err, -omega_max), omega_max))
