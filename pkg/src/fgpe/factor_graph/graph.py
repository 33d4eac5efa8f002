"""Factor graph container, text dump/load and per-step census."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Mapping

import numpy as np

from fgpe.factor_graph.factors import (
    CENSUS_LABEL,
    DIM,
    Factor,
    FactorKind,
    UnknownVariable,
    VariableKey,
    ordering_key,
)
from fgpe.geometry import Pose2

PAYLOAD_LEN = {
    FactorKind.PRIOR_POSE: 3,
    FactorKind.DYNAMICS_EVADER: 3,
    FactorKind.DYNAMICS_PURSUER: 3,
    FactorKind.MEASURE_PURSUER_EVADER: 2,
    FactorKind.MEASURE_PURSUER_OBSTACLE: 4,
    FactorKind.PLANNING: 2,
    FactorKind.COLLISION_AVOID: 2,
    FactorKind.OBSTACLE_AVOID: 5,
}


class FactorGraph:
    """Pose variables keyed by (agent kind, id, timestep) plus an append-only factor list."""

    def __init__(self):
        self.variables: dict[VariableKey, Pose2] = {}
        self.factors: list[Factor] = []

    def add_variable(self, key: VariableKey, initial: Pose2) -> None:
        if key in self.variables:
            raise ValueError(f"variable {key} already exists")
        self.variables[key] = initial

    def add_factor(self, factor: Factor) -> Factor:
        for k in factor.keys:
            if k not in self.variables:
                raise UnknownVariable(f"factor {factor.kind.value} references unknown variable {k}")
        self.factors.append(factor)
        return factor

    def add_factors(self, factors: Iterable[Factor]) -> None:
        for f in factors:
            self.add_factor(f)

    def ordering(self) -> list[VariableKey]:
        return sorted(self.variables, key=ordering_key)

    def values(self) -> dict[VariableKey, Pose2]:
        return dict(self.variables)

    def update(self, values: Mapping[VariableKey, Pose2]) -> None:
        for k, v in values.items():
            if k not in self.variables:
                raise UnknownVariable(f"variable {k} not in graph")
            self.variables[k] = v

    def __len__(self) -> int:
        return len(self.factors)


def factor_census(graph: FactorGraph) -> dict[int, dict[str, int]]:
    """Number of factors of each kind added at each step (retired ones included)."""
    out: dict[int, Counter] = {}
    for f in graph.factors:
        out.setdefault(f.step, Counter())[CENSUS_LABEL[f.kind]] += 1
    return {t: dict(c) for t, c in sorted(out.items())}


# ------------------------------------------------------------------ dump/load


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_graph(graph: FactorGraph) -> str:
    """Line-oriented text form.

    ``VAR kind id t x y theta`` for each variable in solver order, then
    ``FACTOR kind keys... payload... sigmas... step=<n> retired=<0|1>``
    for each factor in insertion order.  A prior carrying a full square-root
    information matrix appends ``info=`` followed by its 9 row-major entries.
    Floats are written with ``repr`` so a load reproduces them bit-for-bit.
    """
    lines = []
    for k in graph.ordering():
        p = graph.variables[k]
        lines.append(f"VAR {k.agent_kind} {k.agent_id} {k.timestep} {_fmt(p.x)} {_fmt(p.y)} {_fmt(p.theta)}")
    for f in graph.factors:
        parts = ["FACTOR", f.kind.value]
        parts += [str(k) for k in f.keys]
        parts += [_fmt(v) for v in f.payload]
        parts += [_fmt(s) for s in f.sigmas]
        parts += [f"step={f.step}", f"retired={int(f.retired)}"]
        if f.sqrt_info is not None:
            parts.append("info=" + ",".join(_fmt(v) for v in np.ravel(f.sqrt_info)))
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def load_graph(text: str) -> FactorGraph:
    g = FactorGraph()
    pending = []
    for lineno, line in enumerate(text.splitlines(), 1):
        tok = line.split()
        if not tok:
            continue
        try:
            if tok[0] == "VAR":
                key = VariableKey.parse(f"{tok[1]}:{tok[2]}:{tok[3]}")
                g.add_variable(key, Pose2(float(tok[4]), float(tok[5]), float(tok[6])))
            elif tok[0] == "FACTOR":
                pending.append((lineno, tok))
            else:
                raise ValueError(f"unknown record {tok[0]!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    for lineno, tok in pending:
        try:
            kind = FactorKind(tok[1])
            nk = len([t for t in tok[2:] if ":" in t])
            keys = tuple(VariableKey.parse(t) for t in tok[2:2 + nk])
            i = 2 + nk
            payload = [float(v) for v in tok[i:i + PAYLOAD_LEN[kind]]]
            i += PAYLOAD_LEN[kind]
            sigmas = tuple(float(v) for v in tok[i:i + DIM[kind]])
            i += DIM[kind]
            opts = dict(t.split("=", 1) for t in tok[i:])
            sqrt_info = None
            if "info" in opts:
                sqrt_info = np.array([float(v) for v in opts["info"].split(",")]).reshape(3, 3)
            f = Factor(kind, keys, payload, sigmas, sqrt_info=sqrt_info,
                       step=int(opts["step"]), retired=opts.get("retired", "0") == "1")
        except (ValueError, IndexError, KeyError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        g.add_factor(f)
    return g
