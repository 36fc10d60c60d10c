"""Risk anchors and post-anchor trading dynamics for oracle disputes."""
from __future__ import annotations

import enum
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable, Sequence

from ..model import FillRecord, OracleEvent, OracleEventType

WINDOW = timedelta(hours=24)


class AnchorKind(str, enum.Enum):
    FIRST_DISPUTE = "first_dispute"
    LAST_PROPOSE = "last_propose"


@dataclass(frozen=True)
class RiskAnchor:
    market_id: str
    anchor_time: datetime
    anchor_kind: AnchorKind
    continued_betting: bool = False
    first_trade_delay_hours: float | None = None


def oracle_risk_anchor(events: Iterable[OracleEvent]):
    """(anchor_time, kind) for one market's events, or None without dispute/propose."""
    events = list(events)
    disputes = [e.timestamp for e in events if e.event_type is OracleEventType.DISPUTE]
    if disputes:
        return min(disputes), AnchorKind.FIRST_DISPUTE
    proposes = [e.timestamp for e in events if e.event_type is OracleEventType.PROPOSE]
    if proposes:
        return max(proposes), AnchorKind.LAST_PROPOSE
    return None


def _hours(delta: timedelta) -> float:
    return delta.total_seconds() / 3600.0


def continued_betting(fills: Iterable[FillRecord], anchor: datetime, window: timedelta = WINDOW):
    """(flag, hours to first fill) over fills timestamped in (anchor, anchor + window]."""
    after = [f.meta.timestamp for f in fills
             if f.market_id is not None and f.meta.timestamp is not None
             and anchor < f.meta.timestamp <= anchor + window]
    if not after:
        return False, None
    return True, _hours(min(after) - anchor)


def risk_anchors(events: Iterable[OracleEvent], fills: Iterable[FillRecord],
                 window: timedelta = WINDOW) -> list[RiskAnchor]:
    """One RiskAnchor per linked market that has a dispute or propose event."""
    by_market: dict[str, list[OracleEvent]] = defaultdict(list)
    for e in events:
        if e.market_id is not None:
            by_market[e.market_id].append(e)
    fills_by: dict[str, list[FillRecord]] = defaultdict(list)
    for f in fills:
        if f.market_id is not None:
            fills_by[f.market_id].append(f)
    out = []
    for mid in sorted(by_market):
        core = oracle_risk_anchor(by_market[mid])
        if core is None:
            continue
        t, kind = core
        flag, delay = continued_betting(fills_by.get(mid, ()), t, window)
        out.append(RiskAnchor(mid, t, kind, flag, delay))
    return out


@dataclass(frozen=True)
class PostAnchorStats:
    cohort: int
    resumed: int
    hourly_trades: tuple[int, ...]
    first_trade_hist: tuple[int, ...]
    cumulative: tuple[float, ...]
    share_under_3h: float | None
    median_delay_hours: float | None


def _hour_bucket(hours: float, n: int) -> int:
    # (0, 24] delays: an exact 24h lands in the last bucket
    return min(int(math.floor(hours)), n - 1)


def post_anchor_histogram(anchors: Sequence[RiskAnchor], fills: Iterable[FillRecord],
                          window: timedelta = WINDOW) -> PostAnchorStats:
    """Hourly trade intensity after the anchor and first-trade delay distribution.

    cumulative[k] is the share of the whole cohort whose first trade came within
    k+1 hours, so it ends at resumed/cohort.
    """
    n = max(1, int(math.ceil(_hours(window))))
    at = {a.market_id: a.anchor_time for a in anchors}
    hourly = [0] * n
    for f in fills:
        t0 = at.get(f.market_id) if f.market_id is not None else None
        ts = f.meta.timestamp
        if t0 is None or ts is None or not (t0 < ts <= t0 + window):
            continue
        hourly[_hour_bucket(_hours(ts - t0), n)] += 1
    delays = [a.first_trade_delay_hours for a in anchors if a.first_trade_delay_hours is not None]
    hist = [0] * n
    for d in delays:
        hist[_hour_bucket(d, n)] += 1
    cohort = len(anchors)
    cum = []
    running = 0
    for c in hist:
        running += c
        cum.append(running / cohort if cohort else 0.0)
    share = sum(1 for d in delays if d < 3.0) / len(delays) if delays else None
    median = statistics.median(delays) if delays else None
    return PostAnchorStats(cohort, len(delays), tuple(hourly), tuple(hist), tuple(cum), share, median)
