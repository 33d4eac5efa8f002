"""World simulation: unicycle robots, noisy sensing, message drops, capture and metrics."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from fgpe import factor_graph as fg
from fgpe.evader import Disk, DwaConfig, NoFeasibleCommand, Trajectory, TrajectoryKind, dwa_plan, scripted_step
from fgpe.factor_graph import InformationWeights
from fgpe.geometry import DegenerateGeometry, Point2, Pose2, RangeBearing, between, range_bearing
from fgpe.kinematics import STOP, Command, unicycle
from fgpe.pursuit import (
    FgpeConfig,
    PursuitState,
    StrategyKind,
    constant_bearing_step,
    fgpe_step,
    line_of_sight,
    new_state,
    pure_pursuit_step,
    separation_guard,
    target_to_command,
)

__all__ = [
    "Command", "PursuerSpec", "EvaderSpec", "SensorNoise", "Scenario", "EpisodeResult", "EpisodeAborted",
    "TraceRow", "Violation", "Measurements", "step_robot", "sense", "check_capture", "run_episode",
    "collision_audit", "tick_period", "format_trace", "parse_trace", "ROBOT_RADIUS",
]

ROBOT_RADIUS = 0.3


class EpisodeAborted(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"episode aborted at step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class PursuerSpec:
    start: Pose2
    v_max: float = 1.0
    omega_max: float = 2.0
    odometry_sigma: tuple[float, float, float] = (0.002, 0.002, 0.001)


@dataclass(frozen=True)
class EvaderSpec:
    start: Pose2 = field(default_factory=lambda: Pose2(3.0, 17.5, 0.0))
    goal: Point2 = field(default_factory=lambda: Point2(32.0, 17.5))
    v_max: float = 1.0
    omega_max: float = 2.0
    trajectory: Trajectory = field(default_factory=Trajectory)
    dwa: DwaConfig = field(default_factory=DwaConfig)
    goal_tolerance: float = 0.5


@dataclass(frozen=True)
class SensorNoise:
    sigma_range: float = 0.5
    sigma_bearing: float = 0.05


def _default_pursuers() -> tuple[PursuerSpec, ...]:
    # four columns across the middle of the arena, alternating below and above the evader's corridor
    return tuple(PursuerSpec(Pose2(x, 10.0 if k % 2 == 0 else 25.0, math.pi / 2 if k % 2 == 0 else -math.pi / 2),
                             v_max=1.05)
                 for k, x in enumerate((12.0, 17.0, 22.0, 27.0)))


def _default_obstacles() -> tuple[Disk, ...]:
    # off the corridor; they double as landmarks for pursuer self-localisation
    return tuple(Disk(Point2(x, y), 0.8) for x, y in ((14.0, 11.5), (21.0, 23.5), (26.0, 12.0)))


@dataclass(frozen=True)
class Scenario:
    """Everything that determines an episode.  Lengths are metres, times seconds."""

    arena_width: float = 3500.0
    arena_height: float = 3500.0
    arena_scale: float = 0.01
    pursuers: tuple[PursuerSpec, ...] = field(default_factory=_default_pursuers)
    evader: EvaderSpec = field(default_factory=EvaderSpec)
    obstacles: tuple[Disk, ...] = field(default_factory=_default_obstacles)
    # tagging range; wider than body contact (2 * ROBOT_RADIUS) so a capture does not require a collision
    capture_radius: float = 1.0
    dt: float = 0.05
    max_steps: int = 1200
    measurement_frequency: float = 1.0
    drop_fraction: float = 0.0
    seed: int = 0
    weights: InformationWeights = field(default_factory=InformationWeights)
    sensor: SensorNoise = field(default_factory=SensorNoise)
    strategy: StrategyKind = StrategyKind.FGPE
    fgpe: FgpeConfig = field(default_factory=FgpeConfig)
    gain: float = 2.0
    stop_on_capture: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strategy", StrategyKind(self.strategy))
        object.__setattr__(self, "pursuers", tuple(self.pursuers))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.fgpe.weights != self.weights:
            object.__setattr__(self, "fgpe", replace(self.fgpe, weights=self.weights))
        validate(self)

    @property
    def bounds(self) -> tuple[float, float]:
        return self.arena_width * self.arena_scale, self.arena_height * self.arena_scale

    @property
    def n_pursuers(self) -> int:
        return len(self.pursuers)


def validate(sc: Scenario) -> None:
    def need(cond, msg):
        if not cond:
            raise ValidationError(msg)

    need(sc.capture_radius > 0, "capture_radius must be > 0 (capture needs a positive radius)")
    need(0.0 <= sc.drop_fraction <= 1.0, "drop_fraction must lie in [0, 1]")
    need(sc.dt > 0, "dt must be > 0")
    need(sc.max_steps >= 0, "max_steps must be >= 0")
    need(sc.measurement_frequency > 0, "measurement_frequency must be > 0")
    need(min(sc.arena_width, sc.arena_height, sc.arena_scale) > 0, "arena dimensions must be > 0")
    need(0 <= sc.seed < 2**64, "seed must be an unsigned 64-bit integer")
    need(len(sc.pursuers) >= 1, "at least one pursuer is required")
    need(sc.gain > 0, "gain must be > 0")
    need(sc.sensor.sigma_range >= 0 and sc.sensor.sigma_bearing >= 0, "sensor noise must be >= 0")
    W, H = sc.bounds
    starts = [p.start for p in sc.pursuers] + [sc.evader.start]
    for s in starts:
        need(0 <= s.x <= W and 0 <= s.y <= H, f"start ({s.x}, {s.y}) lies outside the arena")
    for i in range(len(starts)):
        for j in range(i + 1, len(starts)):
            need(math.hypot(starts[i].x - starts[j].x, starts[i].y - starts[j].y) > 1e-9,
                 "robot starts must be pairwise distinct")
    for p in sc.pursuers:
        need(p.v_max > 0 and p.omega_max > 0, "pursuer speed bounds must be > 0")
        need(all(s >= 0 for s in p.odometry_sigma) and len(p.odometry_sigma) == 3,
             "odometry_sigma must be three non-negative numbers")
    need(sc.evader.v_max > 0 and sc.evader.omega_max > 0, "evader speed bounds must be > 0")
    for o in sc.obstacles:
        need(o.radius > 0, "obstacle radius must be > 0")


# ------------------------------------------------------------------ kinematics


def step_robot(pose: Pose2, cmd: Command, dt: float, v_max: float, omega_max: float,
               bounds: tuple[float, float] | None = None) -> tuple[Pose2, Command]:
    """Clip the command to the speed bounds, integrate one step, keep the robot inside the arena.

    A robot pushing into a wall keeps the tangential part of its motion
    (slides along the wall).  Returns the new pose and the command actually applied.
    """
    applied = cmd.clipped(v_max, omega_max)
    nxt = unicycle(pose, applied.v, applied.omega, dt)
    if bounds is not None:
        W, H = bounds
        nxt = Pose2(min(max(nxt.x, 0.0), W), min(max(nxt.y, 0.0), H), nxt.theta)
    return nxt, applied


def check_capture(pursuers: Sequence[Pose2 | Point2], evader: Pose2 | Point2, r: float) -> bool:
    """True iff some pursuer is within ``r`` (inclusive) of the evader's true position."""
    return any(math.hypot(p.x - evader.x, p.y - evader.y) <= r for p in pursuers)


# ------------------------------------------------------------------ sensing

_ODOMETRY, _EVADER, _DROP, _OBSTACLE = 1, 2, 3, 4


def stream(seed: int, step: int, purpose: int, entity: int, sub: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, step, purpose, entity) cell."""
    return np.random.default_rng([seed, step, purpose, entity, sub])


def tick_period(frequency: float, dt: float) -> int:
    return max(1, int(round(1.0 / (frequency * dt))))


@dataclass
class Measurements:
    evader: dict[int, RangeBearing]
    obstacles: dict[tuple[int, int], RangeBearing]
    tick: bool
    dropped: int


def _noisy(z: RangeBearing, noise: SensorNoise, rng: np.random.Generator) -> RangeBearing:
    e = rng.standard_normal(2)
    return RangeBearing(max(0.0, z.range + noise.sigma_range * e[0]), z.bearing + noise.sigma_bearing * e[1])


def sense(pursuers: Sequence[Pose2], evader: Pose2, obstacles: Sequence[Disk], step: int, period: int,
          drop_fraction: float, noise: SensorNoise, seed: int) -> Measurements:
    """Evader readings on measurement ticks (each dropped independently); obstacle readings every step."""
    tick = step % period == 0
    ev: dict[int, RangeBearing] = {}
    dropped = 0
    if tick:
        for j, p in enumerate(pursuers):
            z = _noisy(range_bearing(p, evader.position), noise, stream(seed, step, _EVADER, j))
            if stream(seed, step, _DROP, j).random() < drop_fraction:
                dropped += 1
            else:
                ev[j] = z
    obs = {}
    for j, p in enumerate(pursuers):
        for i, o in enumerate(obstacles):
            obs[(j, i)] = _noisy(range_bearing(p, o.center), noise, stream(seed, step, _OBSTACLE, j, i))
    return Measurements(ev, obs, tick, dropped)


def noisy_odometry(before: Pose2, after: Pose2, sigma: Sequence[float], seed: int, step: int, j: int) -> Pose2:
    d = between(before, after)
    e = stream(seed, step, _ODOMETRY, j).standard_normal(3)
    return Pose2(d.x + sigma[0] * e[0], d.y + sigma[1] * e[1], d.theta + sigma[2] * e[2])


# ------------------------------------------------------------------ results


@dataclass(frozen=True)
class TraceRow:
    step: int
    entity_kind: str   # "evader" | "pursuer" | "estimate"
    id: int
    x: float
    y: float
    theta: float
    v: float
    omega: float


def format_trace(rows: Sequence[TraceRow]) -> str:
    """``step entity_kind id x y theta v omega`` per line."""
    return "".join(f"{r.step} {r.entity_kind} {r.id} " + " ".join(repr(float(v)) for v in (r.x, r.y, r.theta, r.v, r.omega)) + "\n" for r in rows)


def parse_trace(text: str) -> list[TraceRow]:
    rows = []
    for line in text.splitlines():
        if line.strip():
            s, k, i, *nums = line.split()
            rows.append(TraceRow(int(s), k, int(i), *map(float, nums)))
    return rows


@dataclass
class EpisodeResult:
    captured: bool
    capture_step: int | None
    capture_time: float | None
    escaped: bool
    steps: int
    path_lengths: list[float]
    ellipse_areas: list[float]
    mean_ellipse_area: float | None
    final_ellipse_area: float | None
    estimate_rmse: float | None
    dropped_messages: int
    delivered_messages: int
    solver_iterations: int
    solver_mean_iterations: float
    min_pursuer_separation: float | None
    measured_steps: list[int]
    trace: list[TraceRow] = field(default_factory=list, repr=False)
    covariances: list[np.ndarray] = field(default_factory=list, repr=False)
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        """Deterministic content: everything except the trace, covariances and wall time."""
        d = asdict(self)
        for k in ("trace", "covariances", "wall_time"):
            d.pop(k)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


# ------------------------------------------------------------------ episode


def _evader_command(sc: Scenario, pose: Pose2, v0: float, w0: float, pursuers: Sequence[Pose2]) -> Command:
    ev = sc.evader
    cfg = ev.dwa
    if cfg.v_max != ev.v_max or cfg.omega_max != ev.omega_max or cfg.dt != sc.dt:
        cfg = replace(cfg, v_max=ev.v_max, omega_max=ev.omega_max, dt=sc.dt,
                      horizon=max(cfg.horizon, sc.dt))
    try:
        return dwa_plan(pose, ev.goal, sc.obstacles, [p.position for p in pursuers], cfg, v0, w0)
    except NoFeasibleCommand:
        return STOP


def run_episode(sc: Scenario, record_trace: bool = True) -> EpisodeResult:
    """Simulate one episode; deterministic for a given scenario (including its seed)."""
    t_start = time.perf_counter()
    bounds = sc.bounds
    n = sc.n_pursuers
    dt = sc.dt
    period = tick_period(sc.measurement_frequency, dt)
    strategy = sc.strategy
    uses_graph = strategy in (StrategyKind.FGPE, StrategyKind.STATIONARY)
    scripted = sc.evader.trajectory.kind is not TrajectoryKind.DWA_GOAL

    pursuers = [p.start for p in sc.pursuers]
    evader = sc.evader.start
    if scripted:
        evader = scripted_step(replace(sc.evader.trajectory, start=sc.evader.start), 0.0, sc.evader.v_max)
    ev_cmd = Command(0.0, 0.0)
    p_cmds = [Command(0.0, 0.0)] * n
    path = [0.0] * n
    odometry: list[Pose2] | None = None

    state: PursuitState = new_state(pursuers, evader, dt, [p.v_max for p in sc.pursuers],
                                    [p.omega_max for p in sc.pursuers], sc.obstacles, sc.fgpe)
    areas: list[float] = []
    covs: list[np.ndarray] = []
    sq_err: list[float] = []
    trace: list[TraceRow] = []
    measured_steps: list[int] = []
    dropped = delivered = iterations = solves = 0
    captured = escaped = False
    capture_step = None
    min_sep = math.inf
    estimate: Pose2 | None = None

    step = 0
    while True:
        for a in range(n):
            for b in range(a + 1, n):
                min_sep = min(min_sep, math.hypot(pursuers[a].x - pursuers[b].x, pursuers[a].y - pursuers[b].y))
        if check_capture(pursuers, evader, sc.capture_radius) and not captured:
            captured, capture_step = True, step
        if (captured and sc.stop_on_capture) or escaped or step >= sc.max_steps:
            if record_trace:
                _record(trace, step, evader, pursuers, STOP, [STOP] * n, estimate)
            break

        # evader decides
        if not scripted:
            ev_cmd = _evader_command(sc, evader, ev_cmd.v, ev_cmd.omega, pursuers)

        # pursuers sense and decide
        meas = sense(pursuers, evader, sc.obstacles, step, period, sc.drop_fraction, sc.sensor, sc.seed)
        dropped += meas.dropped
        delivered += len(meas.evader)
        if meas.evader:
            measured_steps.append(step)
        if uses_graph:
            try:
                out = fgpe_step(state, odometry, meas.evader, meas.obstacles)
            except (fg.SingularSystem, DegenerateGeometry, np.linalg.LinAlgError) as exc:
                raise EpisodeAborted(step, exc) from exc
            iterations += out.stats.iterations + out.plan_stats.iterations
            solves += 1
            estimate = out.evader
            cov = out.evader_cov
            covs.append(cov)
            areas.append(fg.ellipse_area(cov))
            sq_err.append((estimate.x - evader.x) ** 2 + (estimate.y - evader.y) ** 2)
            if strategy is StrategyKind.FGPE:
                p_cmds = [target_to_command(out.pursuers[j], out.targets[j], dt, sc.pursuers[j].v_max,
                                            sc.pursuers[j].omega_max, sc.gain) for j in range(n)]
                if sc.fgpe.guard_margin is not None:
                    p_cmds = separation_guard(out.pursuers, p_cmds, dt, sc.fgpe.d_s + sc.fgpe.guard_margin)
            else:
                p_cmds = [STOP] * n
        else:
            p_cmds = _baseline_commands(sc, state, pursuers, meas.evader)

        if record_trace:
            _record(trace, step, evader, pursuers, ev_cmd, p_cmds, estimate)

        # everyone moves
        new_p = []
        for j in range(n):
            nxt, applied = step_robot(pursuers[j], p_cmds[j], dt, sc.pursuers[j].v_max,
                                      sc.pursuers[j].omega_max, bounds)
            p_cmds[j] = applied
            path[j] += math.hypot(nxt.x - pursuers[j].x, nxt.y - pursuers[j].y)
            new_p.append(nxt)
        odometry = [noisy_odometry(pursuers[j], new_p[j], sc.pursuers[j].odometry_sigma, sc.seed, step, j)
                    for j in range(n)]
        pursuers = new_p
        if scripted:
            evader = scripted_step(replace(sc.evader.trajectory, start=sc.evader.start), (step + 1) * dt,
                                   sc.evader.v_max)
        else:
            evader, ev_cmd = step_robot(evader, ev_cmd, dt, sc.evader.v_max, sc.evader.omega_max, bounds)
            if math.hypot(evader.x - sc.evader.goal.x, evader.y - sc.evader.goal.y) <= sc.evader.goal_tolerance:
                escaped = True
        step += 1

    if captured and not sc.stop_on_capture:
        escaped = False
    return EpisodeResult(
        captured=captured,
        capture_step=capture_step,
        capture_time=None if capture_step is None else capture_step * dt,
        escaped=escaped and not captured,
        steps=step,
        path_lengths=path,
        ellipse_areas=areas,
        mean_ellipse_area=float(np.mean(areas)) if areas else None,
        final_ellipse_area=areas[-1] if areas else None,
        estimate_rmse=float(math.sqrt(np.mean(sq_err))) if sq_err else None,
        dropped_messages=dropped,
        delivered_messages=delivered,
        solver_iterations=iterations,
        solver_mean_iterations=iterations / solves if solves else 0.0,
        min_pursuer_separation=None if n < 2 else min_sep,
        measured_steps=measured_steps,
        trace=trace,
        covariances=covs,
        wall_time=time.perf_counter() - t_start,
    )


def _baseline_commands(sc: Scenario, st: PursuitState, pursuers: Sequence[Pose2],
                       readings: dict[int, RangeBearing]) -> list[Command]:
    cmds = []
    for j, p in enumerate(pursuers):
        spec = sc.pursuers[j]
        z = readings.get(j)
        if z is not None:
            ang = p.theta + z.bearing
            st.last_observation[j] = Point2(p.x + z.range * math.cos(ang), p.y + z.range * math.sin(ang))
        obs = st.last_observation[j]
        if obs is None or math.hypot(obs.x - p.x, obs.y - p.y) <= 1e-9:
            cmds.append(Command(spec.v_max, 0.0))
            continue
        if sc.strategy is StrategyKind.PURE_PURSUIT:
            cmds.append(pure_pursuit_step(p, obs, spec.v_max, spec.omega_max, sc.gain))
        else:
            if st.reference_bearing[j] is None:
                st.reference_bearing[j] = line_of_sight(p, obs)
            cmds.append(constant_bearing_step(p, obs, st.reference_bearing[j], spec.v_max, spec.omega_max, sc.gain))
    return cmds


def _record(trace, step, evader, pursuers, ev_cmd, p_cmds, estimate):
    trace.append(TraceRow(step, "evader", 0, evader.x, evader.y, evader.theta, ev_cmd.v, ev_cmd.omega))
    for j, p in enumerate(pursuers):
        trace.append(TraceRow(step, "pursuer", j, p.x, p.y, p.theta, p_cmds[j].v, p_cmds[j].omega))
    if estimate is not None:
        trace.append(TraceRow(step, "estimate", 0, estimate.x, estimate.y, estimate.theta, 0.0, 0.0))


# ------------------------------------------------------------------ audit


@dataclass(frozen=True)
class Violation:
    step: int
    kind: str      # "pursuer" | "obstacle"
    a: int
    b: int
    distance: float


def collision_audit(trace: Sequence[TraceRow], obstacles: Sequence[Disk] = (),
                    min_separation: float = 2 * ROBOT_RADIUS) -> list[Violation]:
    """Steps where two pursuers are closer than ``min_separation`` or a pursuer's centre is inside an obstacle."""
    by_step: dict[int, dict[int, TraceRow]] = {}
    for r in trace:
        if r.entity_kind == "pursuer":
            by_step.setdefault(r.step, {})[r.id] = r
    out = []
    for s in sorted(by_step):
        rows = by_step[s]
        ids = sorted(rows)
        for ia, a in enumerate(ids):
            pa = rows[a]
            for b in ids[ia + 1:]:
                d = math.hypot(pa.x - rows[b].x, pa.y - rows[b].y)
                if d < min_separation:
                    out.append(Violation(s, "pursuer", a, b, d))
            for i, o in enumerate(obstacles):
                d = math.hypot(pa.x - o.center.x, pa.y - o.center.y)
                if d < o.radius:
                    out.append(Violation(s, "obstacle", a, i, d))
    return out
