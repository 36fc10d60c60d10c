"""Correlation and group-difference statistics used by the fee analysis."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from scipy import special

from ..errors import DegenerateInput


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise DegenerateInput("zero variance")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class AnovaResult:
    f: float
    df_between: int
    df_within: int
    ss_between: float
    ss_within: float

    @property
    def p_value(self) -> float:
        """Upper tail of the F distribution via the regularized incomplete beta."""
        if self.f == 0:
            return 1.0
        x = self.df_within / (self.df_within + self.df_between * self.f)
        return float(special.betainc(self.df_within / 2, self.df_between / 2, x))


def anova_oneway(groups: Sequence[Sequence[float]]) -> AnovaResult:
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if any(len(g) == 0 for g in groups):
        raise ValueError("every group needs at least one value")
    n = sum(len(g) for g in groups)
    k = len(groups)
    if n <= k:
        raise ValueError("need more observations than groups")
    grand = math.fsum(v for g in groups for v in g) / n
    means = [math.fsum(g) / len(g) for g in groups]
    ssb = math.fsum(len(g) * (m - grand) ** 2 for g, m in zip(groups, means))
    ssw = math.fsum((v - m) ** 2 for g, m in zip(groups, means) for v in g)
    if ssw == 0:
        raise DegenerateInput("within-group sum of squares is zero")
    dfb, dfw = k - 1, n - k
    return AnovaResult((ssb / dfb) / (ssw / dfw), dfb, dfw, ssb, ssw)


def midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mid = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = mid
        i = j + 1
    return ranks


@dataclass(frozen=True)
class KruskalResult:
    h: float
    h_uncorrected: float
    df: int

    @property
    def p_value(self) -> float:
        return float(special.chdtrc(self.df, self.h))


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> KruskalResult:
    """Rank-based H with midranks for ties and the usual tie correction."""
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if any(len(g) == 0 for g in groups):
        raise ValueError("every group needs at least one value")
    pooled = [v for g in groups for v in g]
    n = len(pooled)
    ranks = midranks(pooled)
    h = 0.0
    pos = 0
    terms = []
    for g in groups:
        r = math.fsum(ranks[pos:pos + len(g)])
        terms.append(r * r / len(g))
        pos += len(g)
    h = 12.0 / (n * (n + 1)) * math.fsum(terms) - 3 * (n + 1)
    h = max(h, 0.0)
    counts: dict[float, int] = {}
    for v in pooled:
        counts[v] = counts.get(v, 0) + 1
    ties = math.fsum(t ** 3 - t for t in counts.values())
    correction = 1.0 - ties / (n ** 3 - n) if n > 1 else 0.0
    corrected = h / correction if correction > 0 else 0.0
    return KruskalResult(corrected, h, len(groups) - 1)
