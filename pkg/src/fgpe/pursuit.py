"""Pursuer strategies: the factor-graph planner and the pure-pursuit / constant-bearing baselines.

The factor-graph strategy keeps one shared graph for the evader and all
pursuers.  At step ``t`` it holds

* executed pursuer poses ``p_j,0..t`` chained by odometry factors,
* evader poses ``q_0..t`` chained by zero-motion dynamics factors and tied to
  the pursuers by range-bearing factors whenever a measurement arrives,
* one *planned* pose ``p_j,t+1`` per pursuer and a predicted ``q_t+1``, with
  planning, collision-avoidance and obstacle-avoidance factors on them.

Solving the graph yields the evader estimate and, from the planned poses, the
next motion target of every pursuer.  When the robots have moved the planned
link is overwritten with the measured odometry and the planning-only factors
on the now-executed poses are retired.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from fgpe import factor_graph as fg
from fgpe.evader import Disk
from fgpe.factor_graph import Factor, FactorGraph, InformationWeights, LMConfig, VariableKey
from fgpe.geometry import DEGENERATE_DISTANCE, DegenerateGeometry, Point2, Pose2, RangeBearing, wrap_angle
from fgpe.kinematics import Command, steer_toward, unicycle


class StrategyKind(str, Enum):
    FGPE = "fgpe"
    PURE_PURSUIT = "pure_pursuit"
    CONSTANT_BEARING = "constant_bearing"
    # runs the factor-graph estimator but never moves the pursuers
    STATIONARY = "stationary"


@dataclass(frozen=True)
class FgpeConfig:
    weights: InformationWeights = field(default_factory=InformationWeights)
    d_s: float = 0.6
    c1: float = 0.61
    c2: float = 0.3
    # planning pull; weak so that it steers the plan without biasing the estimate
    sigma_plan: float = 100.0
    # timesteps per solve (including the planned step); None keeps the whole history
    window: int | None = 12
    pursuer_prior_sigma: tuple[float, float, float] = (0.01, 0.01, 0.01)
    evader_prior_sigma: tuple[float, float, float] = (1.0, 1.0, math.pi)
    plan_heading_sigma: float = math.pi
    # a unicycle cannot slide sideways, so planned steps are kept near the current heading line
    plan_lateral_sigma: float | None = None
    # constant-velocity extrapolation of the evader track for the planning target
    lead: bool = True
    lead_horizon: float = 8.0
    velocity_window: float = 4.0
    gain: float = 2.0
    # forward motion that would bring two pursuers within d_s + guard_margin is stopped; None disables
    guard_margin: float | None = 0.1
    # per-step solves are warm-started, so the looser cost tolerance is enough there
    lm: LMConfig = field(default_factory=lambda: LMConfig(tol_cost=1e-9, check_rank=False, min_range=0.6))

    def __post_init__(self):
        if self.window is not None and self.window < 3:
            raise ValueError("window must span at least three timesteps")
        if min(self.d_s, self.c1, self.c2, self.sigma_plan) <= 0:
            raise ValueError("d_s, c1, c2 and sigma_plan must be positive")


@dataclass
class FgpeOutput:
    targets: list[Pose2]          # planned pose of each pursuer for the next step
    aims: list[Point2]            # point each pursuer steers toward (evader estimate plus lead)
    pursuers: list[Pose2]         # current estimate of each pursuer
    evader: Pose2                 # current evader estimate
    evader_cov: np.ndarray        # its 3x3 marginal covariance
    stats: fg.SolveStats          # estimation solve
    plan_stats: fg.SolveStats     # planning solve with the estimate held fixed
    measured: bool                # an evader measurement entered the graph this step


@dataclass
class PursuitState:
    n_pursuers: int
    dt: float
    v_max: list[float]
    omega_max: list[float]
    obstacles: list[Disk] = field(default_factory=list)
    cfg: FgpeConfig = field(default_factory=FgpeConfig)
    graph: FactorGraph = field(default_factory=FactorGraph)
    step: int = 0
    evader_estimate: Pose2 | None = None
    evader_cov: np.ndarray | None = None
    # baselines
    reference_bearing: list[float | None] = field(default_factory=list)
    last_observation: list[Point2 | None] = field(default_factory=list)
    # factor-graph bookkeeping
    keys_by_step: dict[int, list[VariableKey]] = field(default_factory=dict)
    buckets: dict[int, list[Factor]] = field(default_factory=dict)
    plan_links: list[Factor] = field(default_factory=list)
    plan_factors: list[Factor] = field(default_factory=list)
    window_prior: fg.LinearPrior | None = None
    tick_log: list[tuple[float, float, float]] = field(default_factory=list)


def new_state(pursuer_starts: Sequence[Pose2], evader_guess: Pose2, dt: float,
              v_max: Sequence[float], omega_max: Sequence[float],
              obstacles: Sequence[Disk] = (), cfg: FgpeConfig = FgpeConfig()) -> PursuitState:
    n = len(pursuer_starts)
    st = PursuitState(n, dt, list(v_max), list(omega_max), list(obstacles), cfg)
    st.reference_bearing = [None] * n
    st.last_observation = [None] * n
    st.evader_estimate = evader_guess
    st.evader_cov = np.diag(np.square(cfg.evader_prior_sigma))
    q0 = fg.evader_key(0)
    _add_var(st, q0, evader_guess)
    _add(st, fg.prior_pose(q0, evader_guess, cfg.evader_prior_sigma, step=0))
    for j, p in enumerate(pursuer_starts):
        k = fg.pursuer_key(j, 0)
        _add_var(st, k, p)
        _add(st, fg.prior_pose(k, p, cfg.pursuer_prior_sigma, step=0))
    return st


def _add_var(st: PursuitState, key: VariableKey, value: Pose2) -> None:
    st.graph.add_variable(key, value)
    st.keys_by_step.setdefault(key.timestep, []).append(key)


def _add(st: PursuitState, f: Factor) -> Factor:
    st.graph.add_factor(f)
    st.buckets.setdefault(min(k.timestep for k in f.keys), []).append(f)
    return f


def _evader_velocity(st: PursuitState) -> np.ndarray:
    log = st.tick_log
    if len(log) < 2:
        return np.zeros(2)
    t_new = log[-1][0]
    pts = [e for e in log if e[0] >= t_new - st.cfg.velocity_window]
    if len(pts) < 2:
        pts = log[-2:]
    T = np.array([e[0] for e in pts])
    P = np.array([(e[1], e[2]) for e in pts])
    Tc = T - T.mean()
    denom = float(Tc @ Tc)
    if denom <= 0:
        return np.zeros(2)
    return (Tc @ (P - P.mean(axis=0))) / denom


def _triangulate(values, p_keys, measurements, theta: float) -> Pose2:
    pts = []
    for j, z in measurements.items():
        p = values[p_keys[j]]
        a = p.theta + z.bearing
        pts.append((p.x + z.range * math.cos(a), p.y + z.range * math.sin(a)))
    c = np.mean(pts, axis=0)
    return Pose2(float(c[0]), float(c[1]), theta)


def fgpe_step(st: PursuitState, odometry: Sequence[Pose2] | None,
              measurements: Mapping[int, RangeBearing],
              obstacle_measurements: Mapping[tuple[int, int], RangeBearing] | None = None,
              solve: bool = True) -> FgpeOutput | None:
    """Add step ``st.step``'s variables and factors, solve, and return the plan.

    ``odometry[j]`` is pursuer ``j``'s measured motion from the previous step
    (ignored at step 0); ``measurements`` maps pursuer index to its
    range-bearing reading of the evader; ``obstacle_measurements`` maps
    (pursuer, obstacle) to a reading of that obstacle.  With ``solve=False``
    the graph only grows (for counting factors) and nothing is returned.
    """
    cfg = st.cfg
    w = cfg.weights
    g = st.graph
    t = st.step
    n = st.n_pursuers
    obstacle_measurements = obstacle_measurements or {}

    if t > 0:
        if odometry is None or len(odometry) != n:
            raise ValueError("need one odometry delta per pursuer")
        for j, link in enumerate(st.plan_links):
            link.payload = odometry[j].as_array()
            link.sigmas = w.dynamics
            prev = g.variables[fg.pursuer_key(j, t - 1)]
            g.variables[fg.pursuer_key(j, t)] = prev.compose(odometry[j])
        for f in st.plan_factors:
            f.retired = True
    st.plan_links, st.plan_factors = [], []

    q_t = fg.evader_key(t)
    p_t = [fg.pursuer_key(j, t) for j in range(n)]

    for j, z in sorted(measurements.items()):
        _add(st, fg.measure_pursuer_evader(p_t[j], q_t, z, w.measurement, step=t))
    if measurements:
        # start the solve from where the readings place the evader; the zero-motion
        # guess can sit on top of a pursuer, where bearings are degenerate
        g.variables[q_t] = _triangulate(g.variables, p_t, measurements, g.variables[q_t].theta)
    for (j, i), z in sorted(obstacle_measurements.items()):
        o = st.obstacles[i].center
        _add(st, fg.measure_pursuer_obstacle(p_t[j], o, z, w.measurement, step=t))

    # predicted evader pose and planned pursuer poses for t+1
    q_hat = g.variables[q_t]
    q_n = fg.evader_key(t + 1)
    _add_var(st, q_n, q_hat)
    _add(st, fg.dynamics_evader(q_t, q_n, w.dynamics, step=t))

    vel = _evader_velocity(st) if cfg.lead else np.zeros(2)
    age = (t + 1) * st.dt - (st.tick_log[-1][0] if st.tick_log else 0.0)
    p_n = [fg.pursuer_key(j, t + 1) for j in range(n)]
    offsets = []
    for j in range(n):
        cur = g.variables[p_t[j]]
        reach = st.v_max[j] * st.dt
        dist = math.hypot(q_hat.x - cur.x, q_hat.y - cur.y)
        tau = min(age + dist / max(st.v_max[j], 1e-9), cfg.lead_horizon)
        offset = vel * tau
        offsets.append(offset)
        D = math.hypot(q_hat.x + offset[0] - cur.x, q_hat.y + offset[1] - cur.y)
        # compliance chosen so the unconstrained plan moves about one step's reach
        s_xy = cfg.sigma_plan * math.sqrt(reach / max(D - reach, reach))
        _add_var(st, p_n[j], cur)
        link = _add(st, fg.dynamics_pursuer(p_t[j], p_n[j], Pose2(),
                                            (s_xy, s_xy if cfg.plan_lateral_sigma is None else cfg.plan_lateral_sigma,
                                             cfg.plan_heading_sigma), step=t))
        st.plan_links.append(link)
        st.plan_factors.append(_add(st, fg.planning(q_n, p_n[j], cfg.sigma_plan, tuple(offset), step=t)))
    for i in range(n):
        for j in range(i + 1, n):
            st.plan_factors.append(_add(st, fg.collision_avoid(p_n[i], p_n[j], cfg.d_s, cfg.c1, w.collision, step=t)))
    for j in range(n):
        for o in st.obstacles:
            st.plan_factors.append(_add(st, fg.obstacle_avoid(p_n[j], o.center, cfg.d_s, cfg.c2, w.obstacle,
                                                             radius=o.radius, step=t)))

    if not solve:
        st.step = t + 1
        return None

    # window solve: timesteps t0..t+1, older history enters through a summary prior
    t0 = 0 if cfg.window is None else max(0, t + 2 - cfg.window)
    keys = [k for s in range(t0, t + 2) for k in st.keys_by_step.get(s, ())]
    factors = [f for s in range(t0, t + 2) for f in st.buckets.get(s, ()) if not f.retired]
    priors = [st.window_prior] if t0 > 0 else []
    # estimate first, then plan against the fixed estimate: the pursuers' goals
    # must not pull on the belief about where the evader is
    planning_only = set(map(id, st.plan_factors))
    prob = fg.Problem([f for f in factors if id(f) not in planning_only], keys, priors)
    X, stats = fg.solve_problem(prob, prob.stack(g.variables), cfg.lm)
    sol = prob.unstack(X)
    g.variables.update(sol)
    cov = fg.problem_marginals(prob, X, [q_t])
    plan = fg.Problem(st.plan_links + st.plan_factors, p_t + p_n + [q_n])
    Xp, plan_stats = fg.solve_problem(plan, plan.stack(g.variables), cfg.lm, free=p_n)
    g.variables.update({k: v for k, v in plan.unstack(Xp).items() if k in p_n})
    sol = g.variables

    if cfg.window is not None and t + 3 - cfg.window > t0:
        # timestep t0 leaves the window next step: fold its factors into a prior on t0+1
        leaving = [f for f in st.buckets.get(t0, ()) if not f.retired]
        st.window_prior = fg.summarize(leaving, priors, st.keys_by_step[t0], st.keys_by_step[t0 + 1], sol)

    st.evader_estimate = sol[q_t]
    st.evader_cov = cov[q_t]
    if measurements:
        st.tick_log.append((t * st.dt, sol[q_t].x, sol[q_t].y))
    st.step = t + 1
    return FgpeOutput(
        targets=[sol[k] for k in p_n],
        aims=[Point2(sol[q_n].x + o[0], sol[q_n].y + o[1]) for o in offsets],
        pursuers=[sol[k] for k in p_t],
        evader=sol[q_t],
        evader_cov=cov[q_t],
        stats=stats,
        plan_stats=plan_stats,
        measured=bool(measurements),
    )


def target_to_command(current: Pose2, target: Pose2, dt: float, v_max: float, omega_max: float,
                      gain: float = 2.0, aim: Point2 | None = None) -> Command:
    """Track a planned pose one step ahead.

    The heading is steered toward ``aim`` (the target itself by default) with
    the proportional law used by pure pursuit.  The speed is the planned
    displacement projected on the current heading, so a plan that stays put
    or lies behind the robot gives zero forward speed instead of overshooting.
    """
    dx, dy = target.x - current.x, target.y - current.y
    ax, ay = (dx, dy) if aim is None else (aim.x - current.x, aim.y - current.y)
    if math.hypot(ax, ay) <= DEGENERATE_DISTANCE:
        omega = 0.0
    else:
        err = wrap_angle(math.atan2(ay, ax) - current.theta)
        omega = min(max(gain * err, -omega_max), omega_max)
    dist = math.hypot(dx, dy)
    if dist <= DEGENERATE_DISTANCE:
        return Command(0.0, omega)
    # forward share of the planned step, further scaled by how well the robot faces it
    cos_err = (dx * math.cos(current.theta) + dy * math.sin(current.theta)) / dist
    v = min(max(dist * cos_err * abs(cos_err) / dt, 0.0), v_max)
    return Command(v, omega)


def separation_guard(poses: Sequence[Pose2], cmds: Sequence[Command], dt: float, min_sep: float) -> list[Command]:
    """Zero the forward speed of any pursuer whose next step would close on a teammate inside ``min_sep``.

    Each move is checked against the teammate's current and predicted next
    pose.  Moves that open up a gap, or keep it above ``min_sep``, pass.
    """
    nxt = [unicycle(p, c.v, c.omega, dt) for p, c in zip(poses, cmds)]
    out = list(cmds)
    for j, (p, q) in enumerate(zip(poses, nxt)):
        for i in range(len(poses)):
            if i == j or cmds[j].v == 0.0:
                continue
            now = math.hypot(p.x - poses[i].x, p.y - poses[i].y)
            ahead = min(math.hypot(q.x - poses[i].x, q.y - poses[i].y), math.hypot(q.x - nxt[i].x, q.y - nxt[i].y))
            if ahead < min_sep and ahead < now:
                out[j] = Command(0.0, cmds[j].omega)
                break
    return out


def _check_apart(pursuer: Pose2, target: Point2) -> None:
    if math.hypot(target.x - pursuer.x, target.y - pursuer.y) <= DEGENERATE_DISTANCE:
        raise DegenerateGeometry("pursuer and evader observation coincide")


def pure_pursuit_step(pursuer: Pose2, evader_obs: Point2, v_max: float, omega_max: float,
                      gain: float = 2.0) -> Command:
    """Turn the velocity vector onto the line of sight; always full speed."""
    _check_apart(pursuer, evader_obs)
    return steer_toward(pursuer, evader_obs.x, evader_obs.y, gain, v_max, omega_max)


def line_of_sight(pursuer: Pose2, evader_obs: Point2) -> float:
    return math.atan2(evader_obs.y - pursuer.y, evader_obs.x - pursuer.x)


def constant_bearing_step(pursuer: Pose2, evader_obs: Point2, reference: float, v_max: float,
                          omega_max: float, gain: float = 2.0) -> Command:
    """Hold the world-frame line-of-sight angle at ``reference``; always full speed.

    A line of sight rotating counter-clockwise (positive drift) is corrected
    by turning left, which moves the pursuer across it in the same sense.
    """
    _check_apart(pursuer, evader_obs)
    drift = wrap_angle(line_of_sight(pursuer, evader_obs) - reference)
    return Command(v_max, min(max(gain * drift, -omega_max), omega_max))
