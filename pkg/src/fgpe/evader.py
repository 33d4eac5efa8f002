"""Evader motion: a Dynamic Window Approach planner and scripted reference paths."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import ellipeinc

from fgpe.geometry import Point2, Pose2, wrap_angle, wrap_angles
from fgpe.kinematics import Command, unicycle_rollouts


class NoFeasibleCommand(RuntimeError):
    pass


@dataclass(frozen=True)
class DwaConfig:
    v_max: float = 1.0
    omega_max: float = 2.0
    accel_v: float = 2.0
    accel_omega: float = 8.0
    dt: float = 0.05
    horizon: float = 1.0
    samples_v: int = 5
    samples_omega: int = 11
    weight_goal: float = 1.0
    weight_clearance: float = 0.3
    weight_speed: float = 0.2
    robot_radius: float = 0.3
    pursuer_radius: float = 0.3
    clearance_cap: float = 2.0
    rollout_dt: float | None = None  # integration step for rollouts; defaults to dt

    def __post_init__(self):
        if not (self.v_max > 0 and self.omega_max > 0):
            raise ValueError("v_max and omega_max must be positive")
        if self.dt <= 0 or self.horizon < self.dt:
            raise ValueError("need dt > 0 and horizon >= dt")
        if self.samples_v < 2 or self.samples_omega < 2:
            raise ValueError("need at least 2 samples per axis")
        if min(self.weight_goal, self.weight_clearance, self.weight_speed) < 0:
            raise ValueError("weights must be nonnegative")

    @property
    def step(self) -> float:
        return self.rollout_dt or self.dt

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.step)))


@dataclass(frozen=True)
class Disk:
    center: Point2
    radius: float


def rollout(state: Pose2, cmd: Command, cfg: DwaConfig) -> list[Pose2]:
    """Poses after each of the horizon/dt integration steps under a constant command."""
    if abs(cmd.v) > cfg.v_max or abs(cmd.omega) > cfg.omega_max:
        raise ValueError("command outside the velocity bounds")
    traj = unicycle_rollouts(state.x, state.y, state.theta, [cmd.v], [cmd.omega], cfg.step, cfg.n_steps)
    return [Pose2(*p) for p in traj[0]]


def command_window(v0: float, omega0: float, cfg: DwaConfig) -> tuple[np.ndarray, np.ndarray]:
    """Sampled speeds and turn rates reachable within one control period."""
    v_lo = max(0.0, v0 - cfg.accel_v * cfg.dt)
    v_hi = min(cfg.v_max, v0 + cfg.accel_v * cfg.dt)
    w_lo = max(-cfg.omega_max, omega0 - cfg.accel_omega * cfg.dt)
    w_hi = min(cfg.omega_max, omega0 + cfg.accel_omega * cfg.dt)
    v_lo, v_hi = min(v_lo, v_hi), max(v_lo, v_hi)
    return np.linspace(v_lo, v_hi, cfg.samples_v), np.linspace(w_lo, w_hi, cfg.samples_omega)


def score_grid(state: Pose2, v0: float, omega0: float, goal: Point2, obstacles: Sequence[Disk],
               pursuers: Sequence[Point2], cfg: DwaConfig):
    """Scores of every (v, omega) sample, flattened v-major; -inf marks a colliding rollout."""
    vs, ws = command_window(v0, omega0, cfg)
    V, W = np.meshgrid(vs, ws, indexing="ij")
    V, W = V.ravel(), W.ravel()
    traj = unicycle_rollouts(state.x, state.y, state.theta, V, W, cfg.step, cfg.n_steps)
    end = traj[:, -1, :]
    goal_dir = np.arctan2(goal.y - end[:, 1], goal.x - end[:, 0])
    heading = 1.0 - np.abs(wrap_angles(goal_dir - end[:, 2])) / math.pi

    centers = [(o.center.x, o.center.y, o.radius) for o in obstacles]
    centers += [(p.x, p.y, cfg.pursuer_radius) for p in pursuers]
    clearance = np.full(V.size, np.inf)
    if centers:
        C = np.array(centers)
        # include the start pose so an already-tight spot counts
        pts = np.concatenate([np.broadcast_to([state.x, state.y], (V.size, 1, 2)), traj[:, :, :2]], axis=1)
        d = np.hypot(pts[:, :, None, 0] - C[None, None, :, 0], pts[:, :, None, 1] - C[None, None, :, 1])
        clearance = (d - C[None, None, :, 2]).min(axis=(1, 2))
    capped = np.minimum(clearance, cfg.clearance_cap) / cfg.clearance_cap
    score = cfg.weight_goal * heading + cfg.weight_clearance * capped + cfg.weight_speed * V / cfg.v_max
    score = np.where(clearance < cfg.robot_radius, -np.inf, score)
    return V, W, score


def dwa_plan(state: Pose2, goal: Point2, obstacles: Sequence[Disk] = (), pursuers: Sequence[Point2] = (),
             cfg: DwaConfig = DwaConfig(), v0: float = 0.0, omega0: float = 0.0) -> Command:
    """Best sampled command.  Ties go to the smaller |omega|, then the lower sample index."""
    if not (math.isfinite(goal.x) and math.isfinite(goal.y)):
        raise ValueError("goal must be finite")
    V, W, score = score_grid(state, v0, omega0, goal, obstacles, pursuers, cfg)
    if not np.isfinite(score).any():
        raise NoFeasibleCommand("every sampled trajectory collides")
    best = np.max(score)
    tied = np.flatnonzero(score == best)
    i = min(tied, key=lambda k: (abs(W[k]), k))
    return Command(float(V[i]), float(W[i]))


# ------------------------------------------------------------------ scripted paths


class TrajectoryKind(str, Enum):
    STRAIGHT = "straight"
    SINUSOID = "sinusoid"
    COSINE_ARC = "cosine_arc"
    ORBIT = "orbit"
    DWA_GOAL = "dwa_goal"


@dataclass(frozen=True)
class Trajectory:
    """A path in the frame of ``start``: x runs along the start heading, y to its left."""

    kind: TrajectoryKind = TrajectoryKind.DWA_GOAL
    start: Pose2 = field(default_factory=Pose2)
    amplitude: float = 2.0
    wavelength: float = 10.0
    radius: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "kind", TrajectoryKind(self.kind))
        if min(self.amplitude, self.wavelength, self.radius) <= 0:
            raise ValueError("trajectory amplitude, wavelength and radius must be positive")


def _wave_arc_length(x: float, a: float, k: float, shift: float) -> float:
    """Length of y = A*f(kx) from 0 to x where f' = cos(u + shift) up to sign, a = A*k."""
    m = a * a / (1.0 + a * a)
    u = k * x
    return math.sqrt(1.0 + a * a) / k * (ellipeinc(u + shift, m) - ellipeinc(shift, m))


def _invert_wave(s: float, a: float, k: float, shift: float) -> float:
    if s == 0.0:
        return 0.0
    lo, hi = s / math.sqrt(1.0 + a * a), s
    if hi - lo < 1e-15:
        return s
    return brentq(lambda x: _wave_arc_length(x, a, k, shift) - s, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200)


def scripted_local(traj: Trajectory, s: float) -> tuple[float, float, float]:
    """(x, y, heading) in the start frame after arc length ``s``."""
    kind = traj.kind
    if kind in (TrajectoryKind.STRAIGHT, TrajectoryKind.DWA_GOAL):
        return s, 0.0, 0.0
    k = 2.0 * math.pi / traj.wavelength
    a = traj.amplitude * k
    if kind is TrajectoryKind.SINUSOID:
        # y = A sin(kx); slope a*cos(kx): sqrt(1 + a^2 cos^2 u) = sqrt(1+a^2) sqrt(1 - m sin^2 u)
        x = _invert_wave(s, a, k, 0.0)
        return x, traj.amplitude * math.sin(k * x), math.atan(a * math.cos(k * x))
    if kind is TrajectoryKind.COSINE_ARC:
        # y = A (1 - cos(kx)); slope a*sin(kx), i.e. the sinusoid case shifted by pi/2
        x = _invert_wave(s, a, k, math.pi / 2)
        return x, traj.amplitude * (1.0 - math.cos(k * x)), math.atan(a * math.sin(k * x))
    if kind is TrajectoryKind.ORBIT:
        phi = s / traj.radius
        return traj.radius * math.sin(phi), traj.radius * (1.0 - math.cos(phi)), phi
    raise ValueError(kind)


def scripted_step(traj: Trajectory, t: float, speed: float) -> Pose2:
    """Pose on the scripted path after travelling ``speed * t`` metres of arc length."""
    if t < 0:
        raise ValueError("t must be non-negative")
    lx, ly, lth = scripted_local(traj, speed * t)
    c, s = math.cos(traj.start.theta), math.sin(traj.start.theta)
    return Pose2(traj.start.x + c * lx - s * ly, traj.start.y + s * lx + c * ly, wrap_angle(traj.start.theta + lth))


def orbit_period(traj: Trajectory, speed: float) -> float:
    return 2.0 * math.pi * traj.radius / speed
