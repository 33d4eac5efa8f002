"""Seeded scenario builders shared by the CLI sweeps and the acceptance suite.

Every builder is a pure function of its arguments: the seed only perturbs the
layout through its own random stream, so two calls with the same arguments
give identical scenarios.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from fgpe.evader import Disk
from fgpe.geometry import Point2, Pose2
from fgpe.pursuit import StrategyKind
from fgpe.sim import EvaderSpec, PursuerSpec, Scenario

DT = 0.1
CORRIDOR_Y = 17.5
ARENA = 35.0
_SCATTER = 11
_LAYOUT = 7
CAPTURE_RADIUS = 1.0  # same tagging range as the default scenario

# obstacle candidates, kept off the evader's straight line so they shape the
# pursuers' approach rather than block the corridor
_OBSTACLE_SITES = ((14.0, 11.5), (21.0, 23.5), (26.0, 12.0), (9.0, 24.0), (29.0, 23.0))


def pursuer_layout(n: int, rng: np.random.Generator) -> list[Pose2]:
    """``n`` pursuers alternating below and above the corridor, facing it.

    Columns are spread across the middle of the arena; adding pursuers fills in
    columns, so a larger team covers more of the evader's route.
    """
    xs = np.linspace(12.0, 27.0, max(n, 2))
    poses = []
    for k in range(n):
        below = k % 2 == 0
        x = float(xs[k] if n > 1 else 18.0) + rng.uniform(-1.0, 1.0)
        off = rng.uniform(6.0, 9.0)
        y = CORRIDOR_Y - off if below else CORRIDOR_Y + off
        poses.append(Pose2(x, y, math.pi / 2 if below else -math.pi / 2))
    return poses


def scattered_layout(n: int, rng: np.random.Generator, evader: Point2, obstacles=(),
                     margin: float = 3.0, min_gap: float = 3.0, evader_gap: float = 8.0) -> list[Pose2]:
    """``n`` pursuers dropped uniformly over the arena, each facing the evader's start.

    Draws are sequential from ``rng``, so the first ``k`` pursuers of a larger
    team sit where a ``k``-pursuer team would.
    """
    hi = ARENA - margin
    poses: list[Pose2] = []
    while len(poses) < n:
        x, y = rng.uniform(margin, hi, 2)
        if math.hypot(x - evader.x, y - evader.y) < evader_gap:
            continue
        if any(math.hypot(x - p.x, y - p.y) < min_gap for p in poses):
            continue
        if any(math.hypot(x - o.center.x, y - o.center.y) < o.radius + 1.0 for o in obstacles):
            continue
        poses.append(Pose2(float(x), float(y), math.atan2(evader.y - y, evader.x - x)))
    return poses


def scenario(seed: int, *, n_pursuers: int = 4, speed_ratio: float = 1.05, n_obstacles: int = 0,
             frequency: float = 0.2, drop_fraction: float = 0.0,
             strategy: StrategyKind | str = StrategyKind.FGPE, max_steps: int = 600,
             evader_speed: float = 1.0, capture_radius: float = CAPTURE_RADIUS,
             layout: str = "scattered") -> Scenario:
    """Evader crosses the arena left to right.

    ``layout="corridor"`` puts the pursuers on both flanks of its route,
    ``"scattered"`` drops them anywhere in the arena (see scattered_layout).
    """
    if layout not in ("corridor", "scattered"):
        raise ValueError(f"unknown layout {layout!r}")
    rng = np.random.default_rng([seed, _LAYOUT])
    y0 = CORRIDOR_Y + rng.uniform(-2.0, 2.0)
    y1 = CORRIDOR_Y + rng.uniform(-2.0, 2.0)
    evader = EvaderSpec(start=Pose2(3.0, y0, 0.0), goal=Point2(32.0, y1), v_max=evader_speed)
    v_p = speed_ratio * evader_speed
    if layout == "corridor":
        poses = pursuer_layout(n_pursuers, rng)
    sites = _OBSTACLE_SITES[:n_obstacles]
    obstacles = tuple(Disk(Point2(x + rng.uniform(-0.5, 0.5), y + rng.uniform(-0.5, 0.5)), 0.8)
                      for x, y in sites)
    if layout == "scattered":
        poses = scattered_layout(n_pursuers, np.random.default_rng([seed, _SCATTER]), evader.start.position,
                                 obstacles)
    pursuers = tuple(PursuerSpec(p, v_max=v_p) for p in poses)
    return Scenario(pursuers=pursuers, evader=evader, obstacles=obstacles, dt=DT, max_steps=max_steps,
                    capture_radius=capture_radius,
                    measurement_frequency=frequency, drop_fraction=drop_fraction, seed=seed,
                    strategy=StrategyKind(strategy))


def baseline(sc: Scenario, strategy: StrategyKind | str, frequency: float = 1.0) -> Scenario:
    """Same layout and seed under another strategy (baselines sense at ``frequency``)."""
    return replace(sc, strategy=StrategyKind(strategy), measurement_frequency=frequency)
