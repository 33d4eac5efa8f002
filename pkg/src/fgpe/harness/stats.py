"""Pearson correlation of sweep parameters against an outcome, with Fisher-z intervals."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Mapping, Sequence

__all__ = ["DegenerateSample", "CorrelationReport", "pearson", "fisher_half_width", "correlate"]

Z95 = statistics.NormalDist().inv_cdf(0.975)


class DegenerateSample(ValueError):
    pass


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson coefficient; DegenerateSample if either side has no spread."""
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise DegenerateSample("need at least two pairs")
    xs = [float(v) for v in xs]
    ys = [float(v) for v in ys]
    if min(xs) == max(xs) or min(ys) == max(ys):
        raise DegenerateSample("zero variance")
    try:
        r = statistics.correlation(xs, ys)
    except statistics.StatisticsError as exc:
        raise DegenerateSample(str(exc)) from None
    return max(-1.0, min(1.0, r))


def fisher_half_width(r: float, n: int, z: float = Z95) -> float:
    """Half the width of the Fisher-z confidence interval for ``r`` from ``n`` pairs (inf for n <= 3)."""
    if n <= 3:
        return math.inf
    if abs(r) >= 1.0:
        return 0.0
    c = math.atanh(r)
    se = 1.0 / math.sqrt(n - 3)
    return (math.tanh(c + z * se) - math.tanh(c - z * se)) / 2.0


@dataclass(frozen=True)
class CorrelationReport:
    target: str
    n: int
    r: Mapping[str, float]
    half_width: Mapping[str, float]
    # parameters left out because they did not vary (or the target did not)
    skipped: tuple[str, ...] = ()

    def rows(self) -> list[tuple[str, float, float]]:
        return [(p, self.r[p], self.half_width[p]) for p in self.r]


def correlate(columns: Mapping[str, Sequence[float]], target: Sequence[float], target_name: str = "target",
              ) -> CorrelationReport:
    """Correlate each parameter column with ``target`` over the same rows."""
    n = len(target)
    r, hw, skipped = {}, {}, []
    for name, xs in columns.items():
        if len(xs) != n:
            raise ValueError(f"column {name} has {len(xs)} rows, target has {n}")
        try:
            r[name] = pearson(xs, target)
        except DegenerateSample:
            skipped.append(name)
            continue
        hw[name] = fisher_half_width(r[name], n)
    return CorrelationReport(target_name, n, r, hw, tuple(skipped))
