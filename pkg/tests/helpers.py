"""Small builders shared by several test modules."""

from __future__ import annotations

import math

import numpy as np

import oracles
from fgpe import factor_graph as fg
from fgpe.evader import Disk
from fgpe.geometry import Point2, Pose2, RangeBearing, range_bearing
from fgpe.pursuit import fgpe_step, new_state


def census_graph(n_p: int, n_o: int, steps: int, measure_every: int = 1, solve: bool = False):
    """Grow the planner graph for ``steps`` steps with exact readings; return its factor_census."""
    pursuers = [Pose2(4.0 * j, -6.0, 0.5) for j in range(n_p)]
    obstacles = [Disk(Point2(3.0 * i - 2.0, 6.0), 0.5) for i in range(n_o)]
    evader = Pose2(5.0, 2.0, 0.0)
    st = new_state(pursuers, evader, 0.1, [1.0] * n_p, [2.0] * n_p, obstacles)
    for t in range(steps):
        meas = {}
        if t % measure_every == 0:
            meas = {j: range_bearing(p, evader.position) for j, p in enumerate(pursuers)}
        obs = {(j, i): range_bearing(p, o.center) for j, p in enumerate(pursuers) for i, o in enumerate(obstacles)}
        fgpe_step(st, None if t == 0 else [Pose2()] * n_p, meas, obs, solve=solve)
    return fg.factor_census(st.graph)


W = fg.InformationWeights()
q0, q1 = fg.evader_key(0), fg.evader_key(1)


def _random_values(rng, f):
    vals = {}
    for k in f.keys:
        vals[k] = Pose2(*rng.uniform(-3, 3, 2), rng.uniform(-3, 3))
    return vals


def analytic_vs_fd(f, vals):
    keys = list(f.keys)
    x = np.concatenate([vals[k].as_array() for k in keys])
    angle_rows = {fg.FactorKind.MEASURE_PURSUER_EVADER: (1,), fg.FactorKind.MEASURE_PURSUER_OBSTACLE: (1,),
                  fg.FactorKind.PRIOR_POSE: (2,), fg.FactorKind.DYNAMICS_EVADER: (2,),
                  fg.FactorKind.DYNAMICS_PURSUER: (2,)}.get(f.kind, ())
    fd = oracles.fd_jacobian(lambda v: fg.residual(f, {k: Pose2(*v[3 * i:3 * i + 3]) for i, k in enumerate(keys)}),
                             x, angle_rows=angle_rows)
    an = np.hstack(fg.jacobians(f, vals))
    return np.max(np.abs(an - fd) / np.maximum(1.0, np.abs(fd)))


def factor_of_kind(kind, rng):
    pa, pb = fg.pursuer_key(0, 1), fg.pursuer_key(1, 1)
    m = Pose2(*rng.uniform(-1, 1, 3))
    z = RangeBearing(rng.uniform(0.5, 5), rng.uniform(-3, 3))
    o = Point2(*rng.uniform(-3, 3, 2))
    K = fg.FactorKind
    return {
        K.PRIOR_POSE: lambda: fg.prior_pose(pa, m, (0.1, 0.2, 0.05)),
        K.DYNAMICS_EVADER: lambda: fg.dynamics_evader(q0, q1, W.dynamics, motion=m),
        K.DYNAMICS_PURSUER: lambda: fg.dynamics_pursuer(pa, pb, m, W.dynamics),
        K.MEASURE_PURSUER_EVADER: lambda: fg.measure_pursuer_evader(pa, q1, z, W.measurement),
        K.MEASURE_PURSUER_OBSTACLE: lambda: fg.measure_pursuer_obstacle(pa, o, z, W.measurement),
        K.PLANNING: lambda: fg.planning(q1, pa, 1.5, offset=(0.3, -0.2)),
        # large d_s keeps the hinges on their smooth active branch
        K.COLLISION_AVOID: lambda: fg.collision_avoid(pa, pb, 100.0, 0.61, W.collision),
        K.OBSTACLE_AVOID: lambda: fg.obstacle_avoid(pa, o, 100.0, 0.3, W.obstacle, radius=0.5),
    }[kind]()


def jacobian_check(kind, n: int, seed: int) -> float:
    """Worst relative analytic-vs-FD Jacobian error over ``n`` random configurations of one kind."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n:
        f = factor_of_kind(kind, rng)
        vals = _random_values(rng, f)
        # keep range-bearing targets and hinge partners apart from their anchor
        if kind in (fg.FactorKind.MEASURE_PURSUER_EVADER, fg.FactorKind.COLLISION_AVOID):
            a, b = vals[f.keys[0]], vals[f.keys[1]]
            if math.hypot(a.x - b.x, a.y - b.y) < 0.3:
                continue
        if kind is fg.FactorKind.MEASURE_PURSUER_OBSTACLE:
            a = vals[f.keys[0]]
            if math.hypot(a.x - f.payload[2], a.y - f.payload[3]) < 0.3:
                continue
        if kind is fg.FactorKind.OBSTACLE_AVOID:
            a = vals[f.keys[0]]
            if math.hypot(a.x - f.payload[0], a.y - f.payload[1]) < 0.3:
                continue
        worst = max(worst, analytic_vs_fd(f, vals))
        done += 1
    return worst
