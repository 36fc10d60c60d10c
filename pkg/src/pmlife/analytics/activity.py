"""Daily activity series and rolling topic volume."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Iterable, Sequence

from ..model import FillRecord, MarketRecord
from ..storage import MarketDaySummary

TOPIC_PRIORITY = ("Sports", "Crypto", "Politics", "Games", "Science", "Culture", "Economics",
                  "Geopolitics", "Finance", "Weather", "Tech", "Mentions")
OTHER = "Other"


def primary_topic(tags: Iterable[str], priority: Sequence[str] = TOPIC_PRIORITY) -> str:
    lowered = {t.lower() for t in tags}
    for topic in priority:
        if topic.lower() in lowered:
            return topic
    return OTHER


def market_topics(markets: Iterable[MarketRecord], priority: Sequence[str] = TOPIC_PRIORITY) -> dict[str, str]:
    return {m.condition_id: primary_topic(m.metadata.tags, priority) for m in markets}


@dataclass(frozen=True)
class DailyActivity:
    day: date
    transactions: int
    active_wallets: int
    traded_markets: int
    transactions_norm: float
    active_wallets_norm: float
    traded_markets_norm: float


def _days(start: date, end: date) -> list[date]:
    return [start + timedelta(days=i) for i in range((end - start).days + 1)]


def _normalize(values):
    top = max(values, default=0)
    return [v / top if top else 0.0 for v in values]


def daily_activity(summaries: Iterable[MarketDaySummary], fills: Iterable[FillRecord],
                   start: date | None = None, end: date | None = None) -> list[DailyActivity]:
    """Transactions, active wallets and traded markets per UTC day, each also max-normalized.

    Transactions and traded markets come from market-day summaries; wallets need
    the linked fills because distinct counts do not add across markets.
    """
    tx: dict[date, int] = defaultdict(int)
    markets: dict[date, int] = defaultdict(int)
    for s in summaries:
        tx[s.day] += s.trade_count
        markets[s.day] += 1
    wallets: dict[date, set] = defaultdict(set)
    for f in fills:
        if f.market_id is None or f.meta.timestamp is None:
            continue
        d = f.meta.timestamp.date()
        wallets[d].update((f.maker, f.taker))
    seen = set(tx) | set(wallets)
    if start is None or end is None:
        if not seen:
            return []
        start = start or min(seen)
        end = end or max(seen)
    if start > end:
        return []
    days = _days(start, end)
    t = [tx.get(d, 0) for d in days]
    w = [len(wallets.get(d, ())) for d in days]
    m = [markets.get(d, 0) for d in days]
    return [DailyActivity(d, a, b, c, x, y, z)
            for d, a, b, c, x, y, z in zip(days, t, w, m, _normalize(t), _normalize(w), _normalize(m))]


def rolling_volume_by_topic(summaries: Iterable[MarketDaySummary], topic_of: dict[str, str],
                            window_days: int = 30) -> dict[str, list[tuple[date, float]]]:
    """Trailing mean of daily trade value (collateral units) per primary topic.

    The window is inclusive of the current day; days without data count as zero
    and the divisor is the number of window days inside the observed range.
    """
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    daily: dict[str, dict[date, float]] = defaultdict(lambda: defaultdict(float))
    all_days = set()
    for s in summaries:
        topic = topic_of.get(s.market_id, OTHER)
        daily[topic][s.day] += s.trade_value
        all_days.add(s.day)
    if not all_days:
        return {}
    days = _days(min(all_days), max(all_days))
    out = {}
    for topic in sorted(daily):
        series = [daily[topic].get(d, 0.0) for d in days]
        acc = 0.0
        points = []
        for i, v in enumerate(series):
            acc += v
            if i >= window_days:
                acc -= series[i - window_days]
            span = min(window_days, i + 1)
            points.append((days[i], acc / span))
        out[topic] = points
    return out
