import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fgpe.evader import Disk, Trajectory, TrajectoryKind
from fgpe.geometry import Point2, Pose2, range_bearing
from fgpe.kinematics import Command
from fgpe.pursuit import StrategyKind
from fgpe.sim import (
    EvaderSpec,
    PursuerSpec,
    Scenario,
    SensorNoise,
    TraceRow,
    ValidationError,
    check_capture,
    collision_audit,
    format_trace,
    parse_trace,
    run_episode,
    sense,
    step_robot,
    tick_period,
)


def small_scenario(**kw):
    base = dict(
        pursuers=(PursuerSpec(Pose2(15, 4, math.pi / 2), v_max=1.2), PursuerSpec(Pose2(15, 13, -math.pi / 2), v_max=1.2)),
        evader=EvaderSpec(start=Pose2(5, 8.5, 0), goal=Point2(30, 8.5)),
        obstacles=(),
        dt=0.1,
        max_steps=150,
        measurement_frequency=1.0,
    )
    base.update(kw)
    return Scenario(**base)


# ------------------------------------------------------------------ kinematics


def test_step_robot_zero_command():
    p = Pose2(3, 4, 0.5)
    assert step_robot(p, Command(0, 0), 0.1, 1.0, 1.0)[0] == p


def test_step_robot_clips_before_integrating():
    nxt, applied = step_robot(Pose2(0, 0, 0), Command(5.0, -9.0), 0.1, 1.0, 2.0)
    assert applied == Command(1.0, -2.0)
    assert (nxt.x, nxt.y, nxt.theta) == pytest.approx((0.1, 0.0, -0.2), abs=1e-15)


def test_step_robot_diagonal():
    nxt, _ = step_robot(Pose2(0, 0, math.pi / 4), Command(2.0, 0.0), 0.1, 3.0, 1.0)
    assert (nxt.x, nxt.y) == pytest.approx((0.2 / math.sqrt(2), 0.2 / math.sqrt(2)), abs=1e-15)


def test_step_robot_slides_along_wall():
    nxt, _ = step_robot(Pose2(1.0, 0.02, -math.pi / 4), Command(1.0, 0.0), 0.1, 1.0, 1.0, bounds=(35, 35))
    assert nxt.y == 0.0 and nxt.x == pytest.approx(1.0 + 0.1 / math.sqrt(2))


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_applied_command_always_within_bounds(v, w):
    _, applied = step_robot(Pose2(), Command(v, w), 0.05, 1.5, 2.0)
    assert applied.within(1.5, 2.0)


# ------------------------------------------------------------------ capture


def test_capture_inside_and_on_boundary():
    assert check_capture([Pose2(0, 0, 0)], Pose2(0.5, 0, 0), 0.6)
    assert check_capture([Pose2(0, 0, 0)], Pose2(0.6, 0, 0), 0.6)
    assert not check_capture([Pose2(0, 0, 0)], Pose2(0.61, 0, 0), 0.6)


def test_capture_matches_min_distance():
    rng = np.random.default_rng(0)
    for _ in range(500):
        ps = [Point2(*rng.uniform(0, 5, 2)) for _ in range(4)]
        e = Point2(*rng.uniform(0, 5, 2))
        r = rng.uniform(0.1, 2)
        assert check_capture(ps, e, r) == (min(math.hypot(p.x - e.x, p.y - e.y) for p in ps) <= r)


# ------------------------------------------------------------------ sensing


def test_tick_period():
    assert tick_period(1.0, 0.05) == 20
    assert tick_period(0.2, 0.1) == 50
    assert tick_period(100.0, 0.05) == 1


def test_full_drop_empties_bundle():
    m = sense([Pose2(0, 0, 0), Pose2(1, 1, 0)], Pose2(5, 5, 0), [], 0, 1, 1.0, SensorNoise(), 3)
    assert m.evader == {} and m.dropped == 2 and m.tick


def test_noiseless_readings_are_exact():
    ps = [Pose2(0, 0, 0.3), Pose2(1, 4, -1.0)]
    ob = [Disk(Point2(3, 3), 0.5)]
    m = sense(ps, Pose2(5, 5, 0), ob, 0, 1, 0.0, SensorNoise(0.0, 0.0), 3)
    for j, p in enumerate(ps):
        assert m.evader[j] == range_bearing(p, Point2(5, 5))
        assert m.obstacles[(j, 0)] == range_bearing(p, Point2(3, 3))


def test_off_tick_has_no_evader_readings_but_sees_obstacles():
    m = sense([Pose2()], Pose2(5, 5, 0), [Disk(Point2(3, 3), 0.5)], 3, 10, 0.0, SensorNoise(), 0)
    assert not m.tick and m.evader == {} and (0, 0) in m.obstacles


def test_drop_rate_concentrates():
    ps = [Pose2(0, 0, 0)]
    dropped = sum(sense(ps, Pose2(5, 5, 0), [], k, 1, 0.3, SensorNoise(), 11).dropped for k in range(10_000))
    assert abs(dropped / 10_000 - 0.3) <= 0.02


def test_noise_depends_only_on_its_stream_key():
    ps = [Pose2(0, 0, 0), Pose2(2, 0, 0)]
    a = sense(ps, Pose2(5, 5, 0), [], 7, 1, 0.0, SensorNoise(), 42)
    np.random.default_rng().random(100)  # unrelated draws elsewhere
    b = sense(ps, Pose2(5, 5, 0), [Disk(Point2(1, 9), 0.3)], 7, 1, 0.0, SensorNoise(), 42)
    assert a.evader == b.evader
    assert a.evader != sense(ps, Pose2(5, 5, 0), [], 8, 1, 0.0, SensorNoise(), 42).evader


# ------------------------------------------------------------------ validation


@pytest.mark.parametrize("kw, msg", [
    (dict(capture_radius=0.0), "capture_radius"),
    (dict(drop_fraction=1.5), "drop_fraction"),
    (dict(dt=0.0), "dt"),
    (dict(seed=-1), "seed"),
])
def test_invalid_scenarios(kw, msg):
    with pytest.raises(ValidationError, match=msg):
        small_scenario(**kw)


def test_coincident_starts_rejected():
    with pytest.raises(ValidationError, match="distinct"):
        small_scenario(evader=EvaderSpec(start=Pose2(15, 4, 0)))


def test_start_outside_arena_rejected():
    with pytest.raises(ValidationError, match="outside"):
        small_scenario(evader=EvaderSpec(start=Pose2(-1, 5, 0)))


# ------------------------------------------------------------------ episodes


def test_capture_at_step_zero():
    sc = small_scenario(evader=EvaderSpec(start=Pose2(15.5, 4, 0)), capture_radius=1.0)
    r = run_episode(sc)
    assert r.captured and r.capture_step == 0 and r.capture_time == 0.0


def test_zero_steps():
    r = run_episode(small_scenario(max_steps=0))
    assert not r.captured and r.steps == 0 and r.path_lengths == [0.0, 0.0]


@pytest.mark.parametrize("strategy", list(StrategyKind))
def test_episode_metrics_consistent(strategy):
    sc = small_scenario(strategy=strategy)
    r = run_episode(sc)
    if r.captured:
        assert r.capture_time == pytest.approx(r.capture_step * sc.dt, abs=0)
    for j in range(sc.n_pursuers):
        rows = [t for t in r.trace if t.entity_kind == "pursuer" and t.id == j]
        steps = sum(math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(rows, rows[1:]))
        assert r.path_lengths[j] == pytest.approx(steps, abs=1e-9)
        assert r.path_lengths[j] >= math.hypot(rows[-1].x - rows[0].x, rows[-1].y - rows[0].y) - 1e-12
        spec = sc.pursuers[j]
        assert all(abs(t.v) <= spec.v_max and abs(t.omega) <= spec.omega_max for t in rows)


def test_fgpe_captures_in_small_scenario():
    r = run_episode(small_scenario())
    assert r.captured and r.mean_ellipse_area > 0 and r.estimate_rmse < 3.0


def test_stationary_pursuers_do_not_move():
    r = run_episode(small_scenario(strategy=StrategyKind.STATIONARY, max_steps=30))
    assert r.path_lengths == [0.0, 0.0] and len(r.ellipse_areas) == 30


def test_episode_is_deterministic():
    sc = small_scenario(drop_fraction=0.3, seed=5)
    a, b = run_episode(sc), run_episode(sc)
    assert a.to_json() == b.to_json()
    assert format_trace(a.trace) == format_trace(b.trace)
    assert run_episode(replace(sc, seed=6)).to_json() != a.to_json()


def test_scripted_evader_follows_path():
    traj = Trajectory(TrajectoryKind.ORBIT, radius=3.0)
    sc = small_scenario(evader=EvaderSpec(start=Pose2(15, 8, 0), trajectory=traj), max_steps=20,
                        strategy=StrategyKind.PURE_PURSUIT)
    r = run_episode(sc)
    ev = [t for t in r.trace if t.entity_kind == "evader"]
    for t in ev:
        assert math.hypot(t.x - 15, t.y - 11) == pytest.approx(3.0, abs=1e-9)


def test_trace_text_round_trip():
    r = run_episode(small_scenario(max_steps=5))
    assert parse_trace(format_trace(r.trace)) == r.trace
    first = format_trace(r.trace).splitlines()[0].split()
    assert first[:3] == ["0", "evader", "0"] and len(first) == 8


# ------------------------------------------------------------------ audit


def _row(step, j, x, y):
    return TraceRow(step, "pursuer", j, x, y, 0.0, 0.0, 0.0)


def test_audit_single_pursuer_empty():
    assert collision_audit([_row(s, 0, s, 0) for s in range(10)]) == []


def test_audit_flags_head_on_pass():
    # two pursuers driven straight through each other
    rows = [r for s in range(11) for r in (_row(s, 0, 0.5 * s, 0), _row(s, 1, 5 - 0.5 * s, 0))]
    v = collision_audit(rows)
    assert v and {x.kind for x in v} == {"pursuer"}
    assert all(x.distance < 0.6 for x in v)


def test_audit_flags_obstacle_penetration():
    v = collision_audit([_row(0, 0, 1.0, 1.0)], [Disk(Point2(1.2, 1.0), 0.5)])
    assert v == [v[0]] and v[0].kind == "obstacle" and v[0].b == 0


def test_default_scenario_is_collision_free():
    sc = Scenario()
    for seed in range(10):
        r = run_episode(replace(sc, seed=seed))
        assert collision_audit(r.trace, sc.obstacles) == [], seed
