"""Effective fee rates, category fee summary and fee-volume tests."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Sequence

from ..storage import MarketDaySummary
from .activity import OTHER
from .stats import anova_oneway, kruskal_wallis, pearson_r


@dataclass(frozen=True)
class FeeRateRow:
    market_id: str
    rate: float
    volume: float
    category: str
    positive_fee_days: int


def effective_fee_rate(summaries: Sequence[MarketDaySummary], category: str = OTHER) -> FeeRateRow | None:
    """Fee over trade value, both summed over the market's positive-fee days only."""
    days = [s for s in summaries if s.total_fee > 0]
    if not days:
        return None
    fee = sum(s.total_fee for s in days)
    value = sum(s.total_trade_value for s in days)
    if value <= 0:
        return None
    return FeeRateRow(days[0].market_id, fee / value, value / 1e6, category, len(days))


def fee_rates(summaries: Iterable[MarketDaySummary], category_of: dict[str, str]) -> list[FeeRateRow]:
    by_market: dict[str, list[MarketDaySummary]] = defaultdict(list)
    for s in summaries:
        by_market[s.market_id].append(s)
    rows = []
    for mid in sorted(by_market):
        row = effective_fee_rate(by_market[mid], category_of.get(mid, OTHER))
        if row is not None:
            rows.append(row)
    return rows


def pooled_rate(trade_value: float, total_fee: float) -> float:
    return total_fee / trade_value


@dataclass(frozen=True)
class CategoryFeeRow:
    category: str
    trade_value: float
    total_fee: float
    first_nonzero_fee_date: date | None
    positive_fee_markets: int


def category_fee_summary(summaries: Iterable[MarketDaySummary], category_of: dict[str, str]
                         ) -> list[CategoryFeeRow]:
    """Per-category totals over the fee window (from the first nonzero-fee day onward)."""
    rows = list(summaries)
    fee_days = [s.day for s in rows if s.total_fee > 0]
    if not fee_days:
        return []
    window_start = min(fee_days)
    value: dict[str, int] = defaultdict(int)
    fee: dict[str, int] = defaultdict(int)
    first: dict[str, date] = {}
    positive: dict[str, set] = defaultdict(set)
    for s in rows:
        cat = category_of.get(s.market_id, OTHER)
        if s.day >= window_start:
            value[cat] += s.total_trade_value
            fee[cat] += s.total_fee
        if s.total_fee > 0:
            positive[cat].add(s.market_id)
            if cat not in first or s.day < first[cat]:
                first[cat] = s.day
    cats = sorted(set(value) | set(first), key=lambda c: (-value.get(c, 0), c))
    return [CategoryFeeRow(c, value.get(c, 0) / 1e6, fee.get(c, 0) / 1e6, first.get(c),
                           len(positive.get(c, ()))) for c in cats]


@dataclass(frozen=True)
class FeeTests:
    n_markets: int
    pearson_log_volume: float | None
    categories: tuple[str, ...]
    anova_f: float | None
    anova_p: float | None
    kruskal_h: float | None
    kruskal_p: float | None


def fee_tests(rows: Sequence[FeeRateRow], min_rate: float = 0.0, min_group: int = 30) -> FeeTests:
    """Fee-volume correlation and cross-category tests on positive-fee markets."""
    kept = [r for r in rows if r.rate >= min_rate and r.volume > 0]
    r = None
    if len(kept) >= 2:
        try:
            r = pearson_r([math.log(x.volume) for x in kept], [x.rate for x in kept])
        except ValueError:
            r = None
    groups: dict[str, list[float]] = defaultdict(list)
    for x in kept:
        groups[x.category].append(x.rate)
    cats = tuple(sorted(c for c, g in groups.items() if len(g) >= min_group))
    f = p = h = hp = None
    if len(cats) >= 2:
        data = [groups[c] for c in cats]
        try:
            res = anova_oneway(data)
            f, p = res.f, res.p_value
        except ValueError:
            pass
        kw = kruskal_wallis(data)
        h, hp = kw.h, kw.p_value
    return FeeTests(len(kept), r, cats, f, p, h, hp)
