"""Pre-game pricing, team-vs-team sample construction, isotonic recalibration and metrics."""
from __future__ import annotations

import bisect
import dataclasses
import math
import re
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Sequence

from ..errors import NoPregameTrades, ZeroAmount
from ..model import FillRecord, MarketRecord, OracleEvent, OracleEventType, Side, derive_fill_price

LOG_EPS = 1e-15
DEFAULT_EXCLUDE = re.compile(
    r"spread|total|over/under|o/u|points|rebounds|assists|props?\b|1st|first half|quarter|\([+-]?\d",
    re.IGNORECASE,
)


# -- pricing ----------------------------------------------------------------

def clean_fills_for_pricing(fills: Iterable[FillRecord]) -> list[FillRecord]:
    """Recompute prices from amounts and drop mirrored 'BUY @ 1.0' rows.

    A buy at exactly 1.0 is dropped only when a sell row with the same
    transaction hash and the same token size exists. Zero-amount rows are dropped.
    """
    priced = []
    for f in fills:
        try:
            p = derive_fill_price(f.maker_amount, f.taker_amount, f.direction)
        except ZeroAmount:
            continue
        priced.append(dataclasses.replace(f, price=p))
    sells = {(f.tx_hash, f.token_amount) for f in priced if f.meta.side is Side.SELL}
    out = []
    for f in priced:
        if f.meta.side is Side.BUY and f.price == 1.0 and (f.tx_hash, f.token_amount) in sells:
            continue
        if 0.0 < f.price <= 1.0:
            out.append(f)
    return out


def size_weighted_prob(fills: Iterable[FillRecord], cutoff: datetime) -> float:
    num = den = 0.0
    for f in fills:
        if f.meta.timestamp is None or f.meta.timestamp >= cutoff:
            continue
        num += f.size * f.price
        den += f.size
    if den <= 0:
        raise NoPregameTrades(f"no fills before {cutoff.isoformat()}")
    return num / den


# -- matcher ----------------------------------------------------------------

@dataclass
class TeamMatcher:
    """Rule-based parser for single-game winner questions.

    Recognizes "<A> vs. <B>" (YES = A wins) and "Will <A> win ..." with an
    opponent given as "against/vs. <B>". Anything else returns None.
    """
    teams: Sequence[str]
    exclude: re.Pattern = DEFAULT_EXCLUDE

    def __post_init__(self):
        self._lookup = {t.lower(): t for t in self.teams}

    def _team(self, text: str):
        return self._lookup.get(text.strip().strip("?.!").strip().lower())

    def match(self, title: str):
        if not title or self.exclude.search(title):
            return None
        m = re.fullmatch(r"\s*(.+?)\s+vs\.?\s+(.+?)\s*\??\s*", title, re.IGNORECASE)
        if m and not title.lower().startswith("will "):
            a, b = self._team(m.group(1)), self._team(m.group(2))
            if a and b and a != b:
                return a, b
            return None
        m = re.fullmatch(r"\s*will\s+(?:the\s+)?(.+?)\s+win\s+(?:against|vs\.?|over)\s+(?:the\s+)?(.+?)\s*\??\s*",
                         title, re.IGNORECASE)
        if m:
            a, b = self._team(m.group(1)), self._team(m.group(2))
            if a and b and a != b:
                return a, b
        return None


# -- dataset ----------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationSample:
    market_id: str
    team: str
    p: float
    y: int
    season: int


def season_of(ts: datetime) -> int:
    """Seasons are named by the calendar year in which they end; they start in October."""
    return ts.year + 1 if ts.month >= 10 else ts.year


def oracle_outcomes(events: Iterable[OracleEvent]) -> dict[str, float]:
    """Final settled YES price per linked market."""
    last: dict[str, tuple] = {}
    for e in events:
        if e.event_type is not OracleEventType.SETTLE or e.market_id is None or e.settled_price is None:
            continue
        key = (e.block_number, e.log_index)
        if e.market_id not in last or key > last[e.market_id][0]:
            last[e.market_id] = (key, e.settled_price)
    return {m: v for m, (_, v) in last.items()}


def build_calibration_dataset(markets: Iterable[MarketRecord], fills: Iterable[FillRecord],
                              outcomes: dict[str, float], matcher: TeamMatcher) -> list[CalibrationSample]:
    """Up to two rows per matched market, one per team side with usable pre-game fills.

    The game start is taken as the market end date. Markets with a non-binary
    settlement (e.g. 0.5) or no end date are skipped.
    """
    by_token: dict[str, list[FillRecord]] = defaultdict(list)
    for f in clean_fills_for_pricing(fills):
        by_token[f.asset_id].append(f)
    rows = []
    for m in sorted(markets, key=lambda m: m.condition_id):
        pair = matcher.match(m.metadata.title)
        cutoff = m.metadata.end_date
        outcome = outcomes.get(m.condition_id)
        tokens = m.tokens()
        if pair is None or cutoff is None or outcome not in (0.0, 1.0) or len(tokens) != 2:
            continue
        yes, no = tokens
        season = season_of(cutoff)
        for team, token, won in ((pair[0], yes, outcome == 1.0), (pair[1], no, outcome == 0.0)):
            try:
                p = size_weighted_prob(by_token.get(token, ()), cutoff)
            except NoPregameTrades:
                continue
            rows.append(CalibrationSample(m.condition_id, team, p, int(won), season))
    return rows


def split_by_season(samples: Iterable[CalibrationSample], test_season: int = 2026):
    train, test = [], []
    for s in samples:
        if s.season < test_season:
            train.append(s)
        elif s.season == test_season:
            test.append(s)
    return train, test


# -- isotonic ---------------------------------------------------------------

@dataclass(frozen=True)
class IsotonicStep:
    """Nondecreasing step function through the pooled knots."""
    knots: tuple[float, ...]
    values: tuple[float, ...]

    def __call__(self, x: float) -> float:
        i = bisect.bisect_right(self.knots, x) - 1
        return self.values[max(i, 0)]

    def predict(self, xs: Iterable[float]) -> list[float]:
        return [self(x) for x in xs]


def pava(y: Sequence[float], w: Sequence[float] | None = None) -> list[float]:
    """Weighted least-squares nondecreasing fit of y in the given order."""
    if w is None:
        w = [1.0] * len(y)
    blocks: list[list[float]] = []  # [mean, weight, count]
    for yi, wi in zip(y, w):
        blocks.append([float(yi), float(wi), 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2, c2 = blocks.pop()
            m1, w1, c1 = blocks[-1]
            tw = w1 + w2
            blocks[-1] = [(m1 * w1 + m2 * w2) / tw, tw, c1 + c2]
    out = []
    for m, _, c in blocks:
        out.extend([m] * c)
    return out


def isotonic_fit(x: Sequence[float], y: Sequence[float]) -> IsotonicStep:
    if len(x) != len(y) or not x:
        raise ValueError("x and y must be non-empty and of equal length")
    sums: dict[float, list[float]] = {}
    for xi, yi in zip(x, y):
        acc = sums.setdefault(float(xi), [0.0, 0])
        acc[0] += yi
        acc[1] += 1
    knots = sorted(sums)
    means = [sums[k][0] / sums[k][1] for k in knots]
    weights = [sums[k][1] for k in knots]
    return IsotonicStep(tuple(knots), tuple(pava(means, weights)))


# -- metrics ----------------------------------------------------------------

@dataclass(frozen=True)
class BinRow:
    lower: float
    upper: float
    count: int
    confidence: float | None
    accuracy: float | None


@dataclass(frozen=True)
class CalibrationReport:
    n: int
    brier: float
    log_loss: float
    ece: float
    mce: float
    bins: tuple[BinRow, ...]


def bin_index(p: float, n_bins: int) -> int:
    edges = [k / n_bins for k in range(1, n_bins)]
    return bisect.bisect_right(edges, p)


def calibration_metrics(p: Sequence[float], y: Sequence[int], n_bins: int = 10) -> CalibrationReport:
    if len(p) != len(y) or not p:
        raise ValueError("p and y must be non-empty and of equal length")
    if any(not 0.0 <= v <= 1.0 for v in p):
        raise ValueError("predictions must lie in [0, 1]")
    n = len(p)
    brier = math.fsum((pi - yi) ** 2 for pi, yi in zip(p, y)) / n
    terms = []
    for pi, yi in zip(p, y):
        q = min(max(pi, LOG_EPS), 1.0 - LOG_EPS)
        terms.append(yi * math.log(q) + (1 - yi) * math.log(1.0 - q))
    ll = -math.fsum(terms) / n
    groups: list[list[tuple[float, int]]] = [[] for _ in range(n_bins)]
    for pi, yi in zip(p, y):
        groups[bin_index(pi, n_bins)].append((pi, yi))
    rows = []
    ece_terms = []
    mce = 0.0
    for b, g in enumerate(groups):
        lo, hi = b / n_bins, (b + 1) / n_bins
        if not g:
            rows.append(BinRow(lo, hi, 0, None, None))
            continue
        conf = math.fsum(v for v, _ in g) / len(g)
        acc = sum(t for _, t in g) / len(g)
        gap = abs(acc - conf)
        ece_terms.append(len(g) / n * gap)
        mce = max(mce, gap)
        rows.append(BinRow(lo, hi, len(g), conf, acc))
    return CalibrationReport(n, brier, ll, math.fsum(ece_terms), mce, tuple(rows))
