"""Typed factors and their whitened residuals / Jacobians.

Residuals are evaluated in batches: all factors of one kind are stacked and
processed with array operations, so a window of several hundred factors
linearises in a handful of numpy calls.  Single-factor evaluation goes through
the same code with a batch of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from fgpe.geometry import (
    DEGENERATE_DISTANCE,
    DegenerateGeometry,
    Point2,
    Pose2,
    RangeBearing,
    wrap_angles,
)


class UnknownVariable(KeyError):
    pass


class VariableKey(NamedTuple):
    agent_kind: str  # "evader" | "pursuer"
    agent_id: int
    timestep: int

    def __str__(self) -> str:
        return f"{self.agent_kind}:{self.agent_id}:{self.timestep}"

    @classmethod
    def parse(cls, text: str) -> "VariableKey":
        kind, aid, t = text.split(":")
        return make_key(kind, int(aid), int(t))


def make_key(agent_kind: str, agent_id: int, timestep: int) -> VariableKey:
    if agent_kind not in ("evader", "pursuer"):
        raise ValueError(f"unknown agent kind {agent_kind!r}")
    if agent_id < 0 or timestep < 0:
        raise ValueError("agent_id and timestep must be non-negative")
    if agent_kind == "evader" and agent_id != 0:
        raise ValueError("the single evader always has agent_id 0")
    return VariableKey(agent_kind, agent_id, timestep)


def evader_key(t: int) -> VariableKey:
    return make_key("evader", 0, t)


def pursuer_key(j: int, t: int) -> VariableKey:
    return make_key("pursuer", j, t)


def ordering_key(k: VariableKey) -> tuple[int, int, int]:
    """Chronological, evader before pursuers within a step."""
    return (k.timestep, 0 if k.agent_kind == "evader" else 1, k.agent_id)


@dataclass(frozen=True)
class InformationWeights:
    """Per-axis standard deviations; each factor's information is diag(1/sigma^2)."""

    sigma_dx: float = 0.1
    sigma_dy: float = 0.1
    sigma_dtheta: float = 0.01
    sigma_range: float = 10.0
    sigma_bearing: float = 0.05
    sigma_cpx: float = 1.0
    sigma_cpy: float = 0.1
    sigma_opx: float = 1.0
    sigma_opy: float = 0.1

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a positive finite number, got {value}")

    @property
    def dynamics(self) -> tuple[float, float, float]:
        return (self.sigma_dx, self.sigma_dy, self.sigma_dtheta)

    @property
    def measurement(self) -> tuple[float, float]:
        return (self.sigma_range, self.sigma_bearing)

    @property
    def collision(self) -> float:
        # scalar hinge residual: the tighter of the two listed axes
        return min(self.sigma_cpx, self.sigma_cpy)

    @property
    def obstacle(self) -> float:
        return min(self.sigma_opx, self.sigma_opy)


class FactorKind(str, Enum):
    PRIOR_POSE = "PriorPose"
    DYNAMICS_EVADER = "DynamicsEvader"
    DYNAMICS_PURSUER = "DynamicsPursuer"
    MEASURE_PURSUER_EVADER = "MeasurePursuerEvader"
    MEASURE_PURSUER_OBSTACLE = "MeasurePursuerObstacle"
    PLANNING = "Planning"
    COLLISION_AVOID = "CollisionAvoid"
    OBSTACLE_AVOID = "ObstacleAvoid"


K = FactorKind

ARITY = {
    K.PRIOR_POSE: 1,
    K.DYNAMICS_EVADER: 2,
    K.DYNAMICS_PURSUER: 2,
    K.MEASURE_PURSUER_EVADER: 2,
    K.MEASURE_PURSUER_OBSTACLE: 1,
    K.PLANNING: 2,
    K.COLLISION_AVOID: 2,
    K.OBSTACLE_AVOID: 1,
}

DIM = {
    K.PRIOR_POSE: 3,
    K.DYNAMICS_EVADER: 3,
    K.DYNAMICS_PURSUER: 3,
    K.MEASURE_PURSUER_EVADER: 2,
    K.MEASURE_PURSUER_OBSTACLE: 2,
    K.PLANNING: 2,
    K.COLLISION_AVOID: 1,
    K.OBSTACLE_AVOID: 1,
}

CENSUS_LABEL = {
    K.DYNAMICS_PURSUER: "dp",
    K.PLANNING: "movp",
    K.MEASURE_PURSUER_EVADER: "mp",
    K.DYNAMICS_EVADER: "dq",
    K.COLLISION_AVOID: "cp",
    K.MEASURE_PURSUER_OBSTACLE: "mo",
    K.OBSTACLE_AVOID: "op",
    K.PRIOR_POSE: "prior",
}


@dataclass(eq=False)
class Factor:
    """One cost term.  ``payload`` layout depends on ``kind``:

    ========================  =====================================
    PriorPose                 mean (x, y, theta)
    Dynamics*                 predicted motion (dx, dy, dtheta) in the start pose's frame
    MeasurePursuerEvader      measured (range, bearing)
    MeasurePursuerObstacle    measured (range, bearing, ox, oy)
    Planning                  target offset (ox, oy)
    CollisionAvoid            (d_s, c1)
    ObstacleAvoid             (ox, oy, radius, d_s, c2)
    ========================  =====================================

    ``sqrt_info`` (priors only) replaces ``diag(1/sigmas)`` when a full
    covariance is known.  A retired factor has been superseded by what
    actually happened and contributes nothing.
    """

    kind: FactorKind
    keys: tuple[VariableKey, ...]
    payload: np.ndarray
    sigmas: tuple[float, ...]
    sqrt_info: np.ndarray | None = None
    step: int | None = None
    retired: bool = False

    def __post_init__(self):
        self.kind = FactorKind(self.kind)
        self.keys = tuple(self.keys)
        self.payload = np.asarray(self.payload, dtype=float)
        self.sigmas = tuple(float(s) for s in self.sigmas)
        if len(self.keys) != ARITY[self.kind]:
            raise ValueError(f"{self.kind.value} takes {ARITY[self.kind]} keys, got {len(self.keys)}")
        if len(self.sigmas) != DIM[self.kind]:
            raise ValueError(f"{self.kind.value} needs {DIM[self.kind]} sigmas")
        if any(not s > 0 for s in self.sigmas):
            raise ValueError("sigmas must be positive")
        if self.step is None:
            self.step = max(k.timestep for k in self.keys)

    @property
    def dim(self) -> int:
        return DIM[self.kind]

    def whitening(self) -> np.ndarray:
        if self.sqrt_info is not None:
            return self.sqrt_info
        return np.diag([1.0 / s for s in self.sigmas])


# ---------------------------------------------------------------- constructors


def prior_pose(key, mean: Pose2, sigmas=None, covariance=None, step=None) -> Factor:
    if covariance is not None:
        cov = np.asarray(covariance, dtype=float)
        info = np.linalg.inv(0.5 * (cov + cov.T))
        # upper-triangular L with L^T L = info
        sqrt_info = np.linalg.cholesky(info).T
        sig = tuple(float(math.sqrt(max(cov[i, i], 1e-300))) for i in range(3))
        return Factor(K.PRIOR_POSE, (key,), mean.as_array(), sig, sqrt_info=sqrt_info, step=step)
    return Factor(K.PRIOR_POSE, (key,), mean.as_array(), tuple(sigmas), step=step)


def dynamics_evader(k0, k1, sigmas, motion: Pose2 | None = None, step=None) -> Factor:
    m = (motion or Pose2.identity()).as_array()
    return Factor(K.DYNAMICS_EVADER, (k0, k1), m, tuple(sigmas), step=step)


def dynamics_pursuer(k0, k1, motion: Pose2, sigmas, step=None) -> Factor:
    return Factor(K.DYNAMICS_PURSUER, (k0, k1), motion.as_array(), tuple(sigmas), step=step)


def measure_pursuer_evader(pursuer, evader, measured: RangeBearing, sigmas, step=None) -> Factor:
    return Factor(K.MEASURE_PURSUER_EVADER, (pursuer, evader), measured.as_array(), tuple(sigmas), step=step)


def measure_pursuer_obstacle(pursuer, obstacle: Point2, measured: RangeBearing, sigmas, step=None) -> Factor:
    payload = [measured.range, measured.bearing, obstacle.x, obstacle.y]
    return Factor(K.MEASURE_PURSUER_OBSTACLE, (pursuer,), payload, tuple(sigmas), step=step)


def planning(evader, pursuer, sigma: float, offset=(0.0, 0.0), step=None) -> Factor:
    return Factor(K.PLANNING, (evader, pursuer), list(offset), (sigma, sigma), step=step)


def collision_avoid(pi, pj, d_s: float, c1: float, sigma: float, step=None) -> Factor:
    return Factor(K.COLLISION_AVOID, (pi, pj), [d_s, c1], (sigma,), step=step)


def obstacle_avoid(pursuer, obstacle: Point2, d_s: float, c2: float, sigma: float,
                   radius: float = 0.0, step=None) -> Factor:
    payload = [obstacle.x, obstacle.y, radius, d_s, c2]
    return Factor(K.OBSTACLE_AVOID, (pursuer,), payload, (sigma,), step=step)


# ------------------------------------------------------------ batch evaluation


def _unit(dx: np.ndarray, dy: np.ndarray):
    d = np.hypot(dx, dy)
    safe = d > 1e-12
    inv = np.where(safe, 1.0 / np.where(safe, d, 1.0), 0.0)
    ux = np.where(safe, dx * inv, 1.0)
    uy = dy * inv
    return d, ux, uy


def _eval_prior(x, payload, W, jac):
    e = x - payload
    e[:, 2] = wrap_angles(e[:, 2])
    r = np.einsum("mij,mj->mi", W, e)
    return r, ([W.copy()] if jac else None)


def _eval_world_delta(xa, xb, payload, jac):
    """(b - a) - R(theta_a) m in world axes; headings as in the relative form."""
    c, s = np.cos(xa[:, 2]), np.sin(xa[:, 2])
    mx, my = payload[:, 0], payload[:, 1]
    r = np.empty((len(xa), 3))
    r[:, 0] = xb[:, 0] - xa[:, 0] - (c * mx - s * my)
    r[:, 1] = xb[:, 1] - xa[:, 1] - (s * mx + c * my)
    r[:, 2] = wrap_angles(xb[:, 2] - xa[:, 2] - payload[:, 2])
    if not jac:
        return r, None
    m = len(xa)
    Ja = np.zeros((m, 3, 3))
    Jb = np.zeros((m, 3, 3))
    Ja[:, 0, 0] = Ja[:, 1, 1] = Ja[:, 2, 2] = -1.0
    Ja[:, 0, 2] = s * mx + c * my
    Ja[:, 1, 2] = -(c * mx - s * my)
    Jb[:, 0, 0] = Jb[:, 1, 1] = Jb[:, 2, 2] = 1.0
    return r, [Ja, Jb]


def _eval_between(xa, xb, payload, jac):
    phi = xa[:, 2] + payload[:, 2]
    c, s = np.cos(phi), np.sin(phi)
    cm, sm = np.cos(payload[:, 2]), np.sin(payload[:, 2])
    dx, dy = xb[:, 0] - xa[:, 0], xb[:, 1] - xa[:, 1]
    r = np.empty((len(xa), 3))
    r[:, 0] = c * dx + s * dy - (cm * payload[:, 0] + sm * payload[:, 1])
    r[:, 1] = -s * dx + c * dy - (-sm * payload[:, 0] + cm * payload[:, 1])
    r[:, 2] = wrap_angles(xb[:, 2] - xa[:, 2] - payload[:, 2])
    if not jac:
        return r, None
    m = len(xa)
    Ja = np.zeros((m, 3, 3))
    Jb = np.zeros((m, 3, 3))
    Ja[:, 0, 0], Ja[:, 0, 1], Ja[:, 0, 2] = -c, -s, -s * dx + c * dy
    Ja[:, 1, 0], Ja[:, 1, 1], Ja[:, 1, 2] = s, -c, -c * dx - s * dy
    Ja[:, 2, 2] = -1.0
    Jb[:, 0, 0], Jb[:, 0, 1] = c, s
    Jb[:, 1, 0], Jb[:, 1, 1] = -s, c
    Jb[:, 2, 2] = 1.0
    return r, [Ja, Jb]


def _eval_range_bearing(obs, tx, ty, measured, jac, factors=None, idx=None):
    dx, dy = tx - obs[:, 0], ty - obs[:, 1]
    d = np.hypot(dx, dy)
    bad = d <= DEGENERATE_DISTANCE
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        who = ""
        if factors is not None:
            f = factors[idx[i]]
            who = f" in {f.kind.value} factor on {', '.join(map(str, f.keys))}"
        raise DegenerateGeometry(f"coincident observer and target{who}")
    r = np.empty((len(obs), 2))
    r[:, 0] = measured[:, 0] - d
    r[:, 1] = wrap_angles(measured[:, 1] - (np.arctan2(dy, dx) - obs[:, 2]))
    if not jac:
        return r, None, None
    d2 = d * d
    m = len(obs)
    Jo = np.zeros((m, 2, 3))
    Jo[:, 0, 0], Jo[:, 0, 1] = dx / d, dy / d
    Jo[:, 1, 0], Jo[:, 1, 1], Jo[:, 1, 2] = -dy / d2, dx / d2, 1.0
    Jt = np.zeros((m, 2, 3))
    Jt[:, 0, 0], Jt[:, 0, 1] = -dx / d, -dy / d
    Jt[:, 1, 0], Jt[:, 1, 1] = dy / d2, -dx / d2
    return r, Jo, Jt


class _Batch:
    """All live factors of one kind, pre-gathered into arrays."""

    def __init__(self, kind: FactorKind, factors: Sequence[Factor], fidx: list[int],
                 col_of: dict[VariableKey, int], row0: int):
        self.kind = kind
        self.fidx = fidx
        self.dim = DIM[kind]
        self.m = len(fidx)
        self.row0 = row0
        self.slots = []
        for s in range(ARITY[kind]):
            try:
                self.slots.append(np.array([col_of[factors[i].keys[s]] for i in fidx], dtype=np.int64))
            except KeyError as exc:
                raise UnknownVariable(f"variable {exc.args[0]} not in values") from None
        self.payload = np.array([factors[i].payload for i in fidx], dtype=float).reshape(self.m, -1)
        if kind is K.PRIOR_POSE:
            self.W = np.array([factors[i].whitening() for i in fidx]).reshape(self.m, 3, 3)
        else:
            self.inv_sigma = 1.0 / np.array([factors[i].sigmas for i in fidx]).reshape(self.m, self.dim)

    def evaluate(self, X: np.ndarray, jac: bool, factors=None):
        """Whitened residuals (m, d) and per-slot Jacobians (m, d, 3)."""
        k = self.kind
        xs = [X[s] for s in self.slots]
        p = self.payload
        if k is K.PRIOR_POSE:
            return _eval_prior(xs[0], p, self.W, jac)
        if k is K.DYNAMICS_EVADER:
            r, J = _eval_world_delta(xs[0], xs[1], p, jac)
        elif k is K.DYNAMICS_PURSUER:
            r, J = _eval_between(xs[0], xs[1], p, jac)
        elif k is K.MEASURE_PURSUER_EVADER:
            r, Jo, Jt = _eval_range_bearing(xs[0], xs[1][:, 0], xs[1][:, 1], p, jac, factors, self.fidx)
            J = [Jo, Jt] if jac else None
        elif k is K.MEASURE_PURSUER_OBSTACLE:
            r, Jo, _ = _eval_range_bearing(xs[0], p[:, 2], p[:, 3], p[:, :2], jac, factors, self.fidx)
            J = [Jo] if jac else None
        elif k is K.PLANNING:
            r = xs[0][:, :2] + p - xs[1][:, :2]
            J = None
            if jac:
                Jq = np.zeros((self.m, 2, 3))
                Jq[:, 0, 0] = Jq[:, 1, 1] = 1.0
                J = [Jq, -Jq]
        elif k is K.COLLISION_AVOID:
            d, ux, uy = _unit(xs[0][:, 0] - xs[1][:, 0], xs[0][:, 1] - xs[1][:, 1])
            d_s, c = p[:, 0], p[:, 1]
            active = d < d_s
            r = np.where(active, 1.0 - d / c, 0.0)[:, None]
            J = None
            if jac:
                g = np.where(active, -1.0 / c, 0.0)
                Ji = np.zeros((self.m, 1, 3))
                Ji[:, 0, 0], Ji[:, 0, 1] = g * ux, g * uy
                J = [Ji, -Ji]
        elif k is K.OBSTACLE_AVOID:
            dist, ux, uy = _unit(xs[0][:, 0] - p[:, 0], xs[0][:, 1] - p[:, 1])
            d = dist - p[:, 2]
            d_s, c = p[:, 3], p[:, 4]
            active = d < d_s
            r = np.where(active, 1.0 - d / c, 0.0)[:, None]
            J = None
            if jac:
                g = np.where(active, -1.0 / c, 0.0)
                Ji = np.zeros((self.m, 1, 3))
                Ji[:, 0, 0], Ji[:, 0, 1] = g * ux, g * uy
                J = [Ji]
        else:  # pragma: no cover
            raise ValueError(k)
        r = r * self.inv_sigma
        if jac:
            J = [Js * self.inv_sigma[:, :, None] for Js in J]
        return r, J


def build_batches(factors: Sequence[Factor], col_of: dict[VariableKey, int]) -> list[_Batch]:
    by_kind: dict[FactorKind, list[int]] = {}
    for i, f in enumerate(factors):
        if not f.retired:
            by_kind.setdefault(f.kind, []).append(i)
    batches = []
    row = 0
    for kind in FactorKind:
        idx = by_kind.get(kind)
        if idx:
            b = _Batch(kind, factors, idx, col_of, row)
            batches.append(b)
            row += b.m * b.dim
    return batches


def _single(f: Factor, values) -> tuple[_Batch, np.ndarray]:
    X = []
    col_of = {}
    for k in f.keys:
        if k not in values:
            raise UnknownVariable(f"variable {k} not in values")
        col_of[k] = len(X)
        v = values[k]
        X.append(v.as_array() if isinstance(v, Pose2) else np.asarray(v, dtype=float))
    return _Batch(f.kind, [f], [0], col_of, 0), np.array(X)


def residual(f: Factor, values) -> np.ndarray:
    """Whitened residual ``r``; the factor's cost is ``r @ r``."""
    if f.retired:
        for k in f.keys:
            if k not in values:
                raise UnknownVariable(f"variable {k} not in values")
        return np.zeros(f.dim)
    b, X = _single(f, values)
    r, _ = b.evaluate(X, jac=False, factors=[f])
    return r[0]


def jacobians(f: Factor, values) -> list[np.ndarray]:
    """Whitened Jacobian blocks, one ``(dim, 3)`` matrix per key."""
    if f.retired:
        return [np.zeros((f.dim, 3)) for _ in f.keys]
    b, X = _single(f, values)
    _, J = b.evaluate(X, jac=True, factors=[f])
    return [Js[0] for Js in J]
