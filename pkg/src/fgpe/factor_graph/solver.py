"""Levenberg-Marquardt over SE(2) pose variables and marginal covariances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from fgpe.factor_graph.factors import Factor, FactorKind, UnknownVariable, VariableKey, build_batches, ordering_key
from fgpe.geometry import DegenerateGeometry, Pose2, wrap_angles

DENSE_LIMIT = 1200  # unknowns; below this a dense Cholesky beats sparse LU
RANK_TOL = 1e-13


class SingularSystem(np.linalg.LinAlgError):
    pass


class NotPSD(ValueError):
    pass


@dataclass(frozen=True)
class LMConfig:
    lambda_init: float = 1e-4
    lambda_min: float = 1e-12
    lambda_max: float = 1e8
    lambda_factor: float = 10.0
    max_iters: int = 50
    tol_dx: float = 1e-8
    # relative decrease; 1e-9 can stop ~1e-6 short of the optimum on small non-zero-residual graphs
    tol_cost: float = 1e-12
    check_rank: bool = True
    # trial steps may not bring a range-bearing target closer than this to its
    # sensor (unless it already was); bearings are singular at zero range
    min_range: float = 0.0


@dataclass
class SolveStats:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    lambda_final: float
    # total cost after each accepted step, in order
    accepted_costs: list[float] = field(default_factory=list)


class LinearSystem:
    """Whitened linearisation: J (rows grouped per factor), b = -r, column map."""

    def __init__(self, J: sp.csr_matrix, b: np.ndarray, columns: list[VariableKey]):
        self.J = J
        self.b = b
        self.columns = columns

    def column_of(self, key: VariableKey) -> int:
        return 3 * self.columns.index(key)


@dataclass
class LinearPrior:
    """Joint Gaussian on several poses: residual ``L (x - mean)`` with headings wrapped.

    Produced by summarising factors that leave a sliding window.
    """

    keys: tuple[VariableKey, ...]
    mean: np.ndarray       # (k, 3)
    sqrt_info: np.ndarray  # (3k, 3k), L^T L is the information matrix

    @property
    def dim(self) -> int:
        return 3 * len(self.keys)

    def residual(self, X_rows: np.ndarray) -> np.ndarray:
        e = X_rows - self.mean
        e[:, 2] = wrap_angles(e[:, 2])
        return self.sqrt_info @ e.ravel()


class Problem:
    """Factors bound to a fixed variable ordering; cheap to re-linearise."""

    def __init__(self, factors: Sequence[Factor], keys: Sequence[VariableKey],
                 priors: Sequence[LinearPrior] = ()):
        self.keys = sorted(keys, key=ordering_key)
        self.col_of = {k: i for i, k in enumerate(self.keys)}
        self.factors = factors
        self.batches = build_batches(factors, self.col_of)
        self.n = 3 * len(self.keys)
        self.m = sum(b.m * b.dim for b in self.batches)
        self.priors = []
        for pr in priors:
            try:
                idx = np.array([self.col_of[k] for k in pr.keys], dtype=np.int64)
            except KeyError as exc:
                raise UnknownVariable(f"variable {exc.args[0]} not in values") from None
            self.priors.append((pr, idx, self.m))
            self.m += pr.dim
        # sparsity pattern is fixed; precompute COO indices per batch
        rows, cols = [], []
        for b in self.batches:
            r0 = b.row0 + np.arange(b.m)[:, None] * b.dim + np.arange(b.dim)[None, :]
            for s in b.slots:
                rr = np.broadcast_to(r0[:, :, None], (b.m, b.dim, 3))
                cc = np.broadcast_to((3 * s)[:, None, None] + np.arange(3)[None, None, :], (b.m, b.dim, 3))
                rows.append(rr.ravel())
                cols.append(cc.ravel())
        for pr, idx, row0 in self.priors:
            cols_p = (3 * idx[:, None] + np.arange(3)[None, :]).ravel()
            rr, cc = np.meshgrid(row0 + np.arange(pr.dim), cols_p, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
        self._rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        self._cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)

    def sensor_ranges(self, X: np.ndarray) -> np.ndarray:
        """Current distance of every range-bearing reading's target (evader or landmark) from its sensor."""
        out = []
        for b in self.batches:
            if b.kind is FactorKind.MEASURE_PURSUER_EVADER:
                d = X[b.slots[1], :2] - X[b.slots[0], :2]
            elif b.kind is FactorKind.MEASURE_PURSUER_OBSTACLE:
                d = b.payload[:, 2:4] - X[b.slots[0], :2]
            else:
                continue
            out.append(np.hypot(d[:, 0], d[:, 1]))
        return np.concatenate(out) if out else np.zeros(0)

    def stack(self, values: Mapping[VariableKey, Pose2]) -> np.ndarray:
        try:
            return np.array([values[k].as_array() for k in self.keys]).reshape(-1, 3)
        except KeyError as exc:
            raise UnknownVariable(f"variable {exc.args[0]} not in values") from None

    def unstack(self, X: np.ndarray) -> dict[VariableKey, Pose2]:
        return {k: Pose2(*X[i]) for i, k in enumerate(self.keys)}

    def residual(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(self.m)
        for b in self.batches:
            r, _ = b.evaluate(X, jac=False, factors=self.factors)
            out[b.row0:b.row0 + b.m * b.dim] = r.ravel()
        for pr, idx, row0 in self.priors:
            out[row0:row0 + pr.dim] = pr.residual(X[idx])
        return out

    def linearize(self, X: np.ndarray, dense: bool = False):
        """Whitened Jacobian (sparse CSR, or a dense array when ``dense``) and residual."""
        r_all = np.empty(self.m)
        data = []
        for b in self.batches:
            r, J = b.evaluate(X, jac=True, factors=self.factors)
            r_all[b.row0:b.row0 + b.m * b.dim] = r.ravel()
            data.extend(Js.ravel() for Js in J)
        for pr, idx, row0 in self.priors:
            r_all[row0:row0 + pr.dim] = pr.residual(X[idx])
            data.append(pr.sqrt_info.ravel())
        vals = np.concatenate(data) if data else np.zeros(0)
        if dense:
            Jd = np.zeros((self.m, self.n))
            Jd[self._rows, self._cols] = vals  # (row, col) pairs are unique
            return Jd, r_all
        Jm = sp.csr_matrix((vals, (self._rows, self._cols)), shape=(self.m, self.n))
        return Jm, r_all


def linearize(graph, values: Mapping[VariableKey, Pose2] | None = None) -> LinearSystem:
    values = graph.variables if values is None else values
    prob = Problem(graph.factors, list(values.keys()))
    J, r = prob.linearize(prob.stack(values))
    return LinearSystem(J, -r, prob.keys)


def total_cost(graph, values: Mapping[VariableKey, Pose2] | None = None) -> float:
    values = graph.variables if values is None else values
    prob = Problem(graph.factors, list(values.keys()))
    r = prob.residual(prob.stack(values))
    return float(r @ r)


# ------------------------------------------------------------------ linear algebra


class _Factorization:
    def __init__(self, H, keys, rank_check: bool = True):
        n = H.shape[0]
        self.dense = n <= DENSE_LIMIT
        if self.dense:
            Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
            try:
                self.cho = scipy.linalg.cho_factor(Hd, lower=False, check_finite=False)
            except np.linalg.LinAlgError:
                raise SingularSystem(_describe(Hd, keys)) from None
            # share of each column's information left after eliminating the earlier ones
            kept = np.diag(self.cho[0]) ** 2 / np.maximum(np.diag(Hd), 1e-300)
            if rank_check and n and np.min(kept) < RANK_TOL:
                raise SingularSystem(_describe(Hd, keys))
        else:
            Hc = sp.csc_matrix(H)
            try:
                self.lu = spla.splu(Hc, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                    options={"SymmetricMode": True})
            except RuntimeError:
                raise SingularSystem("factorisation failed: system has unconstrained directions") from None
            u = np.abs(self.lu.U.diagonal())
            d = np.abs(Hc.diagonal())[self.lu.perm_c]
            if rank_check and np.min(u / np.maximum(d, 1e-300)) < RANK_TOL:
                raise SingularSystem("system has unconstrained directions")

    def solve(self, rhs):
        if self.dense:
            return scipy.linalg.cho_solve(self.cho, rhs, check_finite=False)
        return self.lu.solve(np.asarray(rhs))


def _describe(H, keys) -> str:
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    v = V[:, 0]
    worst = int(np.argmax(np.abs(v))) // 3
    name = keys[worst] if worst < len(keys) else "?"
    return f"system is singular (smallest eigenvalue {w[0]:.3g}); least constrained variable {name}"


def _check_columns(J, keys):
    norms = np.asarray(abs(J).sum(axis=0)).ravel()
    free = np.flatnonzero(norms == 0.0)
    if free.size:
        names = sorted({str(keys[c // 3]) for c in free})
        raise SingularSystem("no factor constrains " + ", ".join(names))


# ------------------------------------------------------------------ optimiser


def optimize_lm(graph, init: Mapping[VariableKey, Pose2] | None = None,
                config: LMConfig = LMConfig(), factors: Sequence[Factor] | None = None,
                ) -> tuple[dict[VariableKey, Pose2], SolveStats]:
    """Minimise total whitened squared error.  Never returns a costlier estimate than ``init``.

    ``factors`` restricts the solve to a subset (a sliding window); the
    variables are then exactly the keys of ``init``.
    """
    values = graph.variables if init is None else init
    prob = Problem(graph.factors if factors is None else factors, list(values.keys()))
    X, stats = solve_problem(prob, prob.stack(values), config)
    return prob.unstack(X), stats


def _normal_equations(J):
    if sp.issparse(J):
        return (J.T @ J).tocsc()
    return J.T @ J


def _damped(H, lam):
    if sp.issparse(H):
        return H + lam * sp.identity(H.shape[0], format="csc")
    Hd = H.copy()
    Hd[np.diag_indices_from(Hd)] += lam
    return Hd


def _closes_in(prob: Problem, X: np.ndarray, Xn: np.ndarray, floor: float) -> bool:
    before = prob.sensor_ranges(X)
    after = prob.sensor_ranges(Xn)
    return bool(np.any(after < np.minimum(before, floor)))


def solve_problem(prob: Problem, X: np.ndarray, config: LMConfig = LMConfig(),
                  free: Sequence[VariableKey] | None = None):
    """LM on ``prob`` from ``X``.  With ``free`` given, every other variable is held at its value in ``X``."""
    dense = prob.n <= DENSE_LIMIT
    X = X.copy()
    if free is None:
        cols = None
        keys = prob.keys
    else:
        keys = sorted(free, key=ordering_key)
        cols = np.concatenate([3 * prob.col_of[k] + np.arange(3) for k in keys]) if keys else np.zeros(0, int)

    def lin(X):
        J, r = prob.linearize(X, dense)
        if cols is not None:
            J = J[:, cols]
        return J, r

    J, r = lin(X)
    _check_columns(J, keys)
    H = _normal_equations(J)
    g = J.T @ r
    cost = float(r @ r)
    cost0 = cost
    if config.check_rank:
        _Factorization(H, keys)
    lam = config.lambda_init
    it = 0
    converged = False
    accepted: list[float] = []
    while it < config.max_iters:
        it += 1
        if not np.all(np.isfinite(g)):
            raise SingularSystem("non-finite gradient")
        try:
            dx = -_Factorization(_damped(H, lam), keys, rank_check=False).solve(g)
        except SingularSystem:
            dx = None
        if dx is not None:
            Xn = X.copy()
            if cols is None:
                Xn += dx.reshape(-1, 3)
            else:
                Xn.reshape(-1)[cols] += dx
            Xn[:, 2] = wrap_angles(Xn[:, 2])
            if config.min_range > 0.0 and _closes_in(prob, X, Xn, config.min_range):
                cost_n = np.inf
            else:
                try:
                    rn = prob.residual(Xn)
                    cost_n = float(rn @ rn)
                except DegenerateGeometry:
                    cost_n = np.inf  # trial step put a sensor on its target; damp harder
        if dx is not None and np.isfinite(cost_n) and cost_n <= cost:
            small_step = float(np.max(np.abs(dx))) < config.tol_dx if dx.size else True
            small_gain = cost - cost_n <= config.tol_cost * max(cost, 1e-300)
            X, cost = Xn, cost_n
            accepted.append(cost)
            lam = max(lam / config.lambda_factor, config.lambda_min)
            if small_step or small_gain or cost == 0.0:
                converged = True
                break
            J, r = lin(X)
            H = _normal_equations(J)
            g = J.T @ r
        else:
            if lam >= config.lambda_max:
                converged = True  # no descent direction left at maximum damping
                break
            lam = min(lam * config.lambda_factor, config.lambda_max)
    return X, SolveStats(it, cost0, cost, converged, lam, accepted)


# ------------------------------------------------------------------ marginals


def marginal_covariances(graph, values: Mapping[VariableKey, Pose2] | None = None,
                         keys: Sequence[VariableKey] | None = None,
                         factors: Sequence[Factor] | None = None) -> dict[VariableKey, np.ndarray]:
    """3x3 marginal covariance blocks of (J^T J)^-1 at ``values``."""
    values = graph.variables if values is None else values
    prob = Problem(graph.factors if factors is None else factors, list(values.keys()))
    keys = prob.keys if keys is None else list(keys)
    return problem_marginals(prob, prob.stack(values), keys)


def problem_marginals(prob: Problem, X: np.ndarray, keys: Sequence[VariableKey]):
    J, _ = prob.linearize(X, prob.n <= DENSE_LIMIT)
    _check_columns(J, prob.keys)
    fac = _Factorization(_normal_equations(J), prob.keys)
    out = {}
    for k in keys:
        if k not in prob.col_of:
            raise UnknownVariable(f"variable {k} not in values")
        c = 3 * prob.col_of[k]
        E = np.zeros((prob.n, 3))
        E[c:c + 3, :] = np.eye(3)
        S = fac.solve(E)[c:c + 3, :]
        out[k] = 0.5 * (S + S.T)
    return out


def marginal_covariance(graph, values, key: VariableKey, factors=None) -> np.ndarray:
    return marginal_covariances(graph, values, [key], factors)[key]


def ellipse_area(cov: np.ndarray, scale: float = 1.0) -> float:
    """Area of the 1-sigma position ellipse, pi * sqrt(det Sigma_xy), times ``scale``."""
    cov = np.asarray(cov, dtype=float)
    S = cov[:2, :2]
    if not np.allclose(S, S.T, rtol=1e-9, atol=1e-12):
        raise NotPSD("covariance block is not symmetric")
    S = 0.5 * (S + S.T)
    w = np.linalg.eigvalsh(S)
    if w[0] < -1e-12:
        raise NotPSD(f"covariance block has negative eigenvalue {w[0]:.3g}")
    w = np.clip(w, 0.0, None)
    return float(scale * math.pi * math.sqrt(w[0] * w[1]))


def ellipse_axes(cov: np.ndarray) -> tuple[float, float, float]:
    """Semi-axes (major, minor) and orientation of the 1-sigma position ellipse."""
    S = 0.5 * (np.asarray(cov)[:2, :2] + np.asarray(cov)[:2, :2].T)
    w, V = np.linalg.eigh(S)
    w = np.clip(w, 0.0, None)
    return float(math.sqrt(w[1])), float(math.sqrt(w[0])), float(math.atan2(V[1, 1], V[0, 1]))


def summarize(factors: Sequence[Factor], priors: Sequence[LinearPrior], drop: Sequence[VariableKey],
              keep: Sequence[VariableKey], values: Mapping[VariableKey, Pose2]) -> LinearPrior:
    """Gaussian summary on ``keep`` of the given factors after eliminating ``drop``.

    The factors are linearised at ``values``; the ``drop`` block is removed by
    a Schur complement.  The returned prior reproduces both the curvature and
    the gradient the eliminated factors exert on ``keep`` at that point.
    """
    keep = sorted(keep, key=ordering_key)
    drop = sorted(drop, key=ordering_key)
    prob = Problem(factors, list(keep) + list(drop), priors)
    X = prob.stack(values)
    J, r = prob.linearize(X, dense=True)
    H = J.T @ J
    g = J.T @ r
    kc = np.concatenate([3 * prob.col_of[k] + np.arange(3) for k in keep])
    dc = np.concatenate([3 * prob.col_of[k] + np.arange(3) for k in drop]) if drop else np.zeros(0, int)
    Hkk = H[np.ix_(kc, kc)]
    gk = g[kc]
    if dc.size:
        Hdd = H[np.ix_(dc, dc)]
        Hkd = H[np.ix_(kc, dc)]
        try:
            cd = scipy.linalg.cho_factor(Hdd)
        except np.linalg.LinAlgError:
            raise SingularSystem("eliminated variables are not fully constrained") from None
        Hkk = Hkk - Hkd @ scipy.linalg.cho_solve(cd, Hkd.T)
        gk = gk - Hkd @ scipy.linalg.cho_solve(cd, g[dc])
    Hkk = 0.5 * (Hkk + Hkk.T)
    try:
        ck = scipy.linalg.cho_factor(Hkk, lower=False)
    except np.linalg.LinAlgError:
        raise SingularSystem("kept variables are not fully constrained by the summarised factors") from None
    shift = scipy.linalg.cho_solve(ck, gk)
    Xk = np.array([values[k].as_array() for k in keep])
    mean = Xk - shift.reshape(-1, 3)
    mean[:, 2] = wrap_angles(mean[:, 2])
    L = np.triu(ck[0])
    return LinearPrior(tuple(keep), mean, L)
