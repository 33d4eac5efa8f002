"""Pose factor graph: typed factors, Levenberg-Marquardt solver, marginals."""

from fgpe.factor_graph.factors import (
    CENSUS_LABEL,
    Factor,
    FactorKind,
    InformationWeights,
    UnknownVariable,
    VariableKey,
    collision_avoid,
    dynamics_evader,
    dynamics_pursuer,
    evader_key,
    jacobians,
    make_key,
    measure_pursuer_evader,
    measure_pursuer_obstacle,
    obstacle_avoid,
    ordering_key,
    planning,
    prior_pose,
    pursuer_key,
    residual,
)
from fgpe.factor_graph.graph import FactorGraph, dump_graph, factor_census, load_graph
from fgpe.factor_graph.solver import (
    LinearPrior,
    LinearSystem,
    LMConfig,
    NotPSD,
    Problem,
    SingularSystem,
    SolveStats,
    ellipse_area,
    ellipse_axes,
    linearize,
    marginal_covariance,
    marginal_covariances,
    optimize_lm,
    problem_marginals,
    solve_problem,
    summarize,
    total_cost,
)

__all__ = [
    "CENSUS_LABEL", "Factor", "FactorKind", "InformationWeights", "UnknownVariable", "VariableKey",
    "collision_avoid", "dynamics_evader", "dynamics_pursuer", "evader_key", "jacobians", "make_key",
    "measure_pursuer_evader", "measure_pursuer_obstacle", "obstacle_avoid", "ordering_key", "planning",
    "prior_pose", "pursuer_key", "residual",
    "FactorGraph", "dump_graph", "factor_census", "load_graph",
    "LinearPrior", "LinearSystem", "LMConfig", "NotPSD", "Problem", "SingularSystem", "SolveStats",
    "ellipse_area", "ellipse_axes", "linearize", "marginal_covariance", "marginal_covariances", "optimize_lm",
    "problem_marginals", "solve_problem", "summarize", "total_cost",
]
