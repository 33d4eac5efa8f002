import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from helpers import census_graph, jacobian_check
from fgpe import factor_graph as fg
from fgpe.geometry import Point2, Pose2, RangeBearing

W = fg.InformationWeights()
p0, p1 = fg.pursuer_key(0, 0), fg.pursuer_key(1, 0)
q0, q1 = fg.evader_key(0), fg.evader_key(1)


def one_prior_graph(sigmas=(0.1, 0.1, 0.01), n=1):
    g = fg.FactorGraph()
    g.add_variable(q0, Pose2(1, 2, 0.3))
    for _ in range(n):
        g.add_factor(fg.prior_pose(q0, Pose2(1, 2, 0.3), sigmas))
    return g


# ------------------------------------------------------------------ keys / weights


def test_variable_key_round_trip():
    k = fg.pursuer_key(3, 17)
    assert fg.VariableKey.parse(str(k)) == k
    assert fg.evader_key(4).agent_id == 0


def test_keys_rejected():
    with pytest.raises(ValueError):
        fg.make_key("evader", 1, 0)
    with pytest.raises(ValueError):
        fg.make_key("pursuer", -1, 0)


def test_information_weights_defaults_and_validation():
    assert W.dynamics == (0.1, 0.1, 0.01)
    assert W.measurement == (10.0, 0.05)
    with pytest.raises(ValueError):
        fg.InformationWeights(sigma_dx=0.0)


def test_factor_arity_enforced():
    with pytest.raises(ValueError):
        fg.Factor(fg.FactorKind.PLANNING, (q0,), [0, 0], (1, 1))


# ------------------------------------------------------------------ residuals


def test_collision_inactive_when_far():
    f = fg.collision_avoid(p0, p1, 0.6, 0.61, 0.1)
    assert fg.residual(f, {p0: Pose2(0, 0, 0), p1: Pose2(0.8, 0, 0)}) == [0.0]


def test_collision_zero_at_c1():
    f = fg.collision_avoid(p0, p1, 10.0, 0.61, 0.1)
    assert fg.residual(f, {p0: Pose2(0, 0, 0), p1: Pose2(0.61, 0, 0)})[0] == 0.0


def test_collision_active_value_and_boundary():
    f = fg.collision_avoid(p0, p1, 0.6, 0.61, 0.1)
    r = fg.residual(f, {p0: Pose2(0, 0, 0), p1: Pose2(0.3, 0, 0)})
    assert r[0] == pytest.approx((1 - 0.3 / 0.61) / 0.1, rel=1e-14)
    # exactly at d_s the inactive branch applies and the Jacobian is zero
    vals = {p0: Pose2(0, 0, 0), p1: Pose2(0.6, 0, 0)}
    assert fg.residual(f, vals)[0] == 0.0
    assert all(np.all(J == 0) for J in fg.jacobians(f, vals))


def test_obstacle_hinge_uses_surface_distance():
    f = fg.obstacle_avoid(p0, Point2(0, 0), 0.6, 0.3, 0.1, radius=1.0)
    r = fg.residual(f, {p0: Pose2(1.2, 0, 0)})
    assert r[0] == pytest.approx((1 - 0.2 / 0.3) / 0.1, rel=1e-14)
    assert fg.residual(f, {p0: Pose2(1.7, 0, 0)})[0] == 0.0


def test_dynamics_identity_is_zero():
    f = fg.dynamics_pursuer(p0, fg.pursuer_key(0, 1), Pose2(), W.dynamics)
    r = fg.residual(f, {p0: Pose2(), fg.pursuer_key(0, 1): Pose2()})
    assert np.array_equal(r, np.zeros(3))


def test_measurement_perfect_and_perturbed():
    f = fg.measure_pursuer_evader(p0, q0, RangeBearing(1.0, 0.0), (10.0, 0.05))
    assert np.allclose(fg.residual(f, {p0: Pose2(0, 0, 0), q0: Pose2(1, 0, 0)}), 0, atol=0)
    r = fg.residual(f, {p0: Pose2(0, 0, 0), q0: Pose2(1.1, 0, 0)})
    assert r == pytest.approx([-0.01, 0.0], abs=1e-15)


def test_planning_residual_is_xy_only():
    f = fg.planning(q1, fg.pursuer_key(0, 1), 2.0)
    r = fg.residual(f, {q1: Pose2(3, 4, 1.0), fg.pursuer_key(0, 1): Pose2(1, 1, -2.0)})
    assert r == pytest.approx([1.0, 1.5])


def test_missing_key_raises():
    f = fg.prior_pose(q0, Pose2(), (1, 1, 1))
    with pytest.raises(fg.UnknownVariable):
        fg.residual(f, {})
    g = fg.FactorGraph()
    with pytest.raises(fg.UnknownVariable):
        g.add_factor(f)


def test_residuals_match_independent_formulas():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g, truth, init = oracles.random_graph(rng)
        X = {k: v.as_array() for k, v in init.items()}
        for f in g.factors:
            assert np.allclose(fg.residual(f, init), oracles.whitened(f, X), atol=1e-12)


# ------------------------------------------------------------------ cost / linearize


def test_total_cost_empty_and_satisfied_prior():
    assert fg.total_cost(fg.FactorGraph()) == 0.0
    assert fg.total_cost(one_prior_graph()) == 0.0


def test_total_cost_is_sum_of_factor_costs():
    rng = np.random.default_rng(4)
    for _ in range(10):
        g, _, init = oracles.random_graph(rng)
        expect = sum(float(r @ r) for r in (fg.residual(f, init) for f in g.factors))
        assert fg.total_cost(g, init) == pytest.approx(expect, rel=1e-12)


def test_linearize_single_prior_is_diagonal():
    ls = fg.linearize(one_prior_graph())
    assert np.allclose(ls.J.toarray(), np.diag([10.0, 10.0, 100.0]))
    assert np.all(ls.b == 0)


def test_linearize_inactive_hinges_are_zero():
    g = fg.FactorGraph()
    g.add_variable(p0, Pose2(0, 0, 0))
    g.add_variable(p1, Pose2(3, 0, 0))
    g.add_factor(fg.collision_avoid(p0, p1, 0.6, 0.61, 0.1))
    g.add_factor(fg.obstacle_avoid(p0, Point2(0, 5), 0.6, 0.3, 0.1))
    ls = fg.linearize(g)
    assert ls.J.count_nonzero() == 0 and np.all(ls.b == 0)


def test_normal_equations_match_finite_differences():
    rng = np.random.default_rng(8)
    for _ in range(5):
        g, _, init = oracles.random_graph(rng)
        ls = fg.linearize(g, init)
        keys = ls.columns
        x = np.concatenate([init[k].as_array() for k in keys])
        J = oracles.fd_jacobian(lambda v: oracles.stacked_residual(g.factors, keys, v), x)
        r = oracles.stacked_residual(g.factors, keys, x)
        Ja = ls.J.toarray()
        assert np.allclose(Ja.T @ Ja, J.T @ J, atol=1e-5 * max(1.0, np.abs(J.T @ J).max()))
        assert np.allclose(Ja.T @ ls.b, -J.T @ r, atol=1e-5 * max(1.0, np.abs(J.T @ r).max()))


# ------------------------------------------------------------------ Jacobians


@pytest.mark.parametrize("kind", list(fg.FactorKind))
def test_jacobians_match_finite_differences(kind):
    assert jacobian_check(kind, 100, seed=7) < 1e-5


# ------------------------------------------------------------------ solver


def test_solver_at_optimum_stops_immediately():
    vals, stats = fg.optimize_lm(one_prior_graph())
    assert stats.iterations <= 1 and stats.final_cost == 0.0


def test_pure_prior_converges_to_mean():
    g = one_prior_graph()
    vals, stats = fg.optimize_lm(g, {q0: Pose2(1.4, 1.5, 0.1)})
    assert vals[q0].as_array() == pytest.approx([1, 2, 0.3], abs=1e-8)
    assert stats.converged


def test_three_pose_chain_matches_dense_oracle():
    g = fg.FactorGraph()
    keys = [fg.pursuer_key(0, t) for t in range(3)]
    for t, k in enumerate(keys):
        g.add_variable(k, Pose2(t + 0.1, 0.1 * t, 0.05))
    g.add_factor(fg.prior_pose(keys[0], Pose2(0, 0, 0), (0.1, 0.1, 0.01)))
    for a, b in zip(keys, keys[1:]):
        g.add_factor(fg.dynamics_pursuer(a, b, Pose2(1, 0, 0.1), W.dynamics))
    g.add_factor(fg.measure_pursuer_obstacle(keys[2], Point2(3, 2), RangeBearing(2.3, 1.0), W.measurement))
    vals, _ = fg.optimize_lm(g)
    ref = oracles.dense_map(g.factors, g.variables)
    for k in keys:
        assert vals[k].as_array() == pytest.approx(ref[k], abs=1e-6)


def test_random_graphs_match_dense_oracle():
    rng = np.random.default_rng(21)
    for _ in range(20):
        g, _, init = oracles.random_graph(rng)
        vals, _ = fg.optimize_lm(g, init)
        ref = oracles.dense_map(g.factors, init)
        for k, v in vals.items():
            d = v.as_array() - ref[k]
            d[2] = oracles.wrap(d[2])
            assert np.max(np.abs(d)) < 1e-6


def test_accepted_steps_never_increase_cost():
    rng = np.random.default_rng(2)
    for _ in range(20):
        g, _, init = oracles.random_graph(rng)
        _, stats = fg.optimize_lm(g, init)
        costs = [stats.initial_cost] + stats.accepted_costs
        assert all(b <= a for a, b in zip(costs, costs[1:]))
        assert stats.final_cost <= stats.initial_cost


def test_free_variable_raises_singular():
    g = one_prior_graph()
    g.add_variable(q1, Pose2(5, 5, 0))
    g.add_factor(fg.planning(q0, q1, 1.0))  # pins x, y of q1 but not its heading
    with pytest.raises(fg.SingularSystem):
        fg.optimize_lm(g)
    g2 = one_prior_graph()
    g2.add_variable(q1, Pose2(5, 5, 0))
    with pytest.raises(fg.SingularSystem):
        fg.optimize_lm(g2)


def test_gauge_fixed_graphs_are_nonsingular():
    rng = np.random.default_rng(6)
    for _ in range(10):
        g, _, init = oracles.random_graph(rng)
        vals, _ = fg.optimize_lm(g, init)
        fg.marginal_covariances(g, vals)


def test_lm_respects_max_iters():
    rng = np.random.default_rng(1)
    g, _, init = oracles.random_graph(rng)
    _, stats = fg.optimize_lm(g, init, fg.LMConfig(max_iters=1))
    assert stats.iterations == 1


# ------------------------------------------------------------------ marginals


def test_single_prior_marginal():
    cov = fg.marginal_covariance(one_prior_graph(), None, q0)
    assert np.allclose(cov, np.diag([0.01, 0.01, 0.0001]), rtol=1e-12, atol=0)


def test_two_priors_halve_marginal():
    cov = fg.marginal_covariance(one_prior_graph(n=2), None, q0)
    assert np.allclose(cov, np.diag([0.005, 0.005, 0.00005]), rtol=1e-12, atol=0)


def test_marginal_matches_dense_inverse():
    rng = np.random.default_rng(12)
    g, _, init = oracles.random_graph(rng)
    vals, _ = fg.optimize_lm(g, init)
    cov = fg.marginal_covariance(g, vals, q0)
    ref = oracles.dense_covariance(g.factors, vals, q0)
    assert np.allclose(cov, ref, rtol=1e-5, atol=1e-9)


def _evader_chain():
    g = fg.FactorGraph()
    g.add_variable(p0, Pose2(0, 0, 0))
    g.add_factor(fg.prior_pose(p0, Pose2(0, 0, 0), (0.01, 0.01, 0.01)))
    for t in range(3):
        g.add_variable(fg.evader_key(t), Pose2(4 + t, 1, 0))
    g.add_factor(fg.prior_pose(q0, Pose2(4, 1, 0), (1, 1, 1)))
    for t in range(2):
        g.add_factor(fg.dynamics_evader(fg.evader_key(t), fg.evader_key(t + 1), (0.5, 0.5, 0.5)))
    return g


def test_measurement_reduces_evader_uncertainty():
    g = _evader_chain()
    k = fg.evader_key(2)
    before = np.trace(fg.marginal_covariance(g, None, k))
    g.add_factor(fg.measure_pursuer_evader(p0, k, RangeBearing(math.hypot(6, 1), math.atan2(1, 6)), (10, 0.05)))
    after = np.trace(fg.marginal_covariance(g, None, k))
    assert after < before
    assert np.trace(oracles.dense_covariance(g.factors, g.variables, k)) == pytest.approx(after, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 10), st.floats(-3, 3), st.integers(0, 2))
def test_adding_measurement_never_increases_trace(r, b, t):
    g = _evader_chain()
    vals, _ = fg.optimize_lm(g)
    k = fg.evader_key(2)
    before = np.trace(fg.marginal_covariance(g, vals, k))
    if math.hypot(vals[fg.evader_key(t)].x, vals[fg.evader_key(t)].y) < 1e-3:
        return
    g.add_factor(fg.measure_pursuer_evader(p0, fg.evader_key(t), RangeBearing(r, b), (10, 0.05)))
    after = np.trace(fg.marginal_covariance(g, vals, k))
    assert after <= before * (1 + 1e-12)


# ------------------------------------------------------------------ ellipses


@pytest.mark.parametrize("block, area", [
    ([[1, 0], [0, 1]], math.pi),
    ([[4, 0], [0, 1]], 2 * math.pi),
    ([[2, 0.5], [0.5, 1]], math.pi * math.sqrt(1.75)),
])
def test_ellipse_area(block, area):
    cov = np.eye(3)
    cov[:2, :2] = block
    assert fg.ellipse_area(cov) == pytest.approx(area, rel=1e-14)


def test_ellipse_area_rejects_indefinite():
    with pytest.raises(fg.NotPSD):
        fg.ellipse_area(np.diag([1.0, -1.0, 1.0]))


def test_ellipse_axes():
    a, b, ang = fg.ellipse_axes(np.diag([4.0, 1.0, 1.0]))
    assert (a, b) == (2.0, 1.0)
    assert abs(math.sin(ang)) < 1e-15


# ------------------------------------------------------------------ census / dump


def test_census_two_pursuers_one_obstacle():
    census = census_graph(2, 1, steps=2)
    assert census[1] == {"dp": 2, "movp": 2, "mp": 2, "dq": 1, "cp": 1, "mo": 2, "op": 2}


def test_census_single_pursuer_has_no_pairs():
    census = census_graph(1, 0, steps=2)
    assert all("cp" not in c for c in census.values())


def test_dump_load_round_trip():
    rng = np.random.default_rng(9)
    g, _, _ = oracles.random_graph(rng)
    g.factors[0].retired = True
    g.add_factor(fg.prior_pose(q0, Pose2(1, 2, 3), covariance=np.diag([1.0, 2.0, 0.5])))
    text = fg.dump_graph(g)
    h = fg.load_graph(text)
    assert fg.dump_graph(h) == text
    assert fg.total_cost(h) == fg.total_cost(g)


def test_dump_format_lines():
    text = fg.dump_graph(one_prior_graph())
    lines = text.splitlines()
    assert lines[0] == "VAR evader 0 0 1.0 2.0 0.3"
    assert lines[1].startswith("FACTOR PriorPose evader:0:0 1.0 2.0 0.3 0.1 0.1 0.01")


def test_load_rejects_garbage():
    with pytest.raises(ValueError, match="line 1"):
        fg.load_graph("BOGUS 1 2\n")
