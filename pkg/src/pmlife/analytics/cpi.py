"""Bucket-market distribution reconstruction: Gaussian fits to implied bucket masses."""
from __future__ import annotations

import bisect
import math
import re
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize, special

from ..errors import FitDegenerate
from ..model import BASE_UNIT, FillRecord, MarketRecord

INF = math.inf
SQRT2 = math.sqrt(2.0)
SIGMA_FLOOR = 0.01
SIGMA_MAX = 1.0
MU_STEP = 1e-3
MIN_PROB = 0.10
WINDOW = timedelta(hours=24)


def normal_cdf(x: float) -> float:
    if x == INF:
        return 1.0
    if x == -INF:
        return 0.0
    # erfc keeps full relative precision in the lower tail
    return 0.5 * math.erfc(-x / SQRT2)


@dataclass(frozen=True)
class BucketSpec:
    label: str
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"bucket {self.label!r}: lower must be < upper")


_LABEL = re.compile(
    r"(?P<pre><=|>=|≤|≥|<|>)?\s*(?P<val>[+-]?\d+(?:\.\d+)?)\s*%"
    r"(?:\s+or\s+(?P<post>less|below|lower|more|above|higher))?",
    re.IGNORECASE,
)


def parse_bucket_label(label: str, resolution: float = 0.1) -> BucketSpec:
    """Map a reported-value label ("0.2%", "≤0.0%", "0.5% or more") to a range.

    Point labels cover [v - r/2, v + r/2); open-ended labels extend to infinity.
    """
    m = _LABEL.search(label)
    if not m:
        raise ValueError(f"unrecognized bucket label: {label!r}")
    v = float(m.group("val"))
    half = resolution / 2.0
    pre, post = m.group("pre"), (m.group("post") or "").lower()
    lo, hi = round(v - half, 10), round(v + half, 10)
    if pre in ("<=", "≤", "<") or post in ("less", "below", "lower"):
        return BucketSpec(label, -INF, hi)
    if pre in (">=", "≥", ">") or post in ("more", "above", "higher"):
        return BucketSpec(label, lo, INF)
    return BucketSpec(label, lo, hi)


def bucket_mass(mu: float, sigma: float, bucket: BucketSpec) -> float:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return normal_cdf((bucket.upper - mu) / sigma) - normal_cdf((bucket.lower - mu) / sigma)


def partition_masses(mu: float, sigma: float, buckets: Sequence[BucketSpec]) -> list[float]:
    return [bucket_mass(mu, sigma, b) for b in buckets]


def _bounds(buckets):
    lo = np.array([b.lower for b in buckets], dtype=float)
    hi = np.array([b.upper for b in buckets], dtype=float)
    return lo, hi


def _sse(mu, sigma, lo, hi, obs):
    pred = special.ndtr((hi - mu) / sigma) - special.ndtr((lo - mu) / sigma)
    return float(np.sum((pred - obs) ** 2))


def _probit_seed(lo, hi, obs):
    """(mu, sigma) from a line through probit-transformed cumulative masses.

    Exact for noiseless masses; tails use whichever side keeps precision.
    """
    order = np.argsort(lo)
    lo, hi, obs = lo[order], hi[order], obs[order]
    below = np.cumsum(obs)
    above = np.cumsum(obs[::-1])[::-1]
    xs, zs = [], []
    for k in range(len(obs) - 1):
        b = hi[k]
        c, sv = below[k], above[k + 1]
        if not math.isfinite(b) or c <= 0 or sv <= 0:
            continue
        z = special.ndtri(c) if c <= 0.5 else -special.ndtri(sv)
        if math.isfinite(z):
            xs.append(b)
            zs.append(z)
    if len(xs) < 2:
        return None
    slope, intercept = np.polyfit(np.array(xs), np.array(zs), 1)
    if slope <= 0:
        return None
    return float(-intercept / slope), float(1.0 / slope)


def _refine(objective, x0, log_floor):
    best = np.asarray(x0, dtype=float), objective(x0)
    for _ in range(3):
        # absolute tolerance for exact data, relative once the residual is nonzero
        fatol = max(1e-24, 1e-12 * best[1])
        res = optimize.minimize(
            objective, best[0], method="Nelder-Mead",
            bounds=[(None, None), (log_floor, None)],
            options={"xatol": 1e-11, "fatol": fatol, "maxiter": 4000},
        )
        if res.fun < best[1] - fatol:
            best = res.x, float(res.fun)
        else:
            break
    return best


@dataclass(frozen=True)
class GaussianFit:
    mu: float
    sigma: float
    residual: float


def fit_gaussian_to_buckets(buckets: Sequence[BucketSpec], observed: Sequence[float],
                            sigma_floor: float = SIGMA_FLOOR, sigma_max: float = SIGMA_MAX,
                            mu_step: float = MU_STEP) -> GaussianFit:
    """Least-squares (mu, sigma) for bucket masses.

    Observed masses are normalized to sum to 1. The best point of a coarse grid
    (mu step 1e-3, geometric sigma) and a probit-line estimate are both scored; the
    better one seeds a bounded Nelder-Mead refinement on (mu, log sigma).
    """
    if len(buckets) != len(observed) or len(buckets) < 2:
        raise ValueError("need at least two buckets with one observation each")
    obs = np.asarray(observed, dtype=float)
    if np.any(obs < 0) or obs.sum() <= 0:
        raise FitDegenerate("observed masses must be non-negative with positive total")
    obs = obs / obs.sum()
    for b, o in zip(buckets, obs):
        if o >= 1.0 - 1e-12 and (math.isinf(b.lower) or math.isinf(b.upper)):
            raise FitDegenerate(f"all mass in unbounded bucket {b.label!r}")
    lo, hi = _bounds(buckets)
    finite = np.concatenate([lo[np.isfinite(lo)], hi[np.isfinite(hi)]])
    if finite.size == 0:
        raise FitDegenerate("no finite bucket bounds")
    mus = np.arange(finite.min() - 0.5, finite.max() + 0.5 + mu_step / 2, mu_step)
    sigmas = np.geomspace(sigma_floor, max(sigma_max, sigma_floor * 1.5), 41)
    edges = np.unique(np.concatenate([lo, hi]))
    cdf = special.ndtr((edges[None, None, :] - mus[:, None, None]) / sigmas[None, :, None])
    pred = cdf[..., np.searchsorted(edges, hi)] - cdf[..., np.searchsorted(edges, lo)]
    sse = np.sum((pred - obs) ** 2, axis=2)
    i, j = np.unravel_index(int(np.argmin(sse)), sse.shape)
    log_floor = math.log(sigma_floor)

    def objective(v):
        return _sse(v[0], math.exp(max(v[1], log_floor)), lo, hi, obs)

    seeds = [np.array([mus[i], math.log(sigmas[j])])]
    probit = _probit_seed(lo, hi, obs)
    if probit is not None and probit[1] >= sigma_floor:
        seeds.append(np.array([probit[0], math.log(probit[1])]))
    best = _refine(objective, min(seeds, key=objective), log_floor)
    mu, ls = best[0]
    return GaussianFit(float(mu), math.exp(max(float(ls), log_floor)), float(best[1]))


# -- trades and snapshots ---------------------------------------------------

def cpi_event_prob(price: float, side: str) -> float:
    if not 0.0 <= price <= 1.0:
        raise ValueError("price must lie in [0, 1]")
    side = side.lower()
    if side == "yes":
        return price
    if side == "no":
        return 1.0 - price
    raise ValueError(f"side must be 'yes' or 'no', got {side!r}")


@dataclass(frozen=True)
class CpiTrade:
    token: str
    timestamp: datetime
    prob: float
    value: float


def trades_from_fills(fills: Iterable[FillRecord], yes_token_of: dict[str, str]) -> list[CpiTrade]:
    """Event-probability trades keyed by market; NO-token prices map to 1 - p."""
    out = []
    for f in fills:
        if f.market_id is None or f.meta.timestamp is None or f.market_id not in yes_token_of:
            continue
        side = "yes" if f.asset_id == yes_token_of[f.market_id] else "no"
        out.append(CpiTrade(f.market_id, f.meta.timestamp, cpi_event_prob(min(f.price, 1.0), side),
                            f.collateral_amount / BASE_UNIT))
    return out


def cpi_token_snapshot(trades: Iterable[CpiTrade], t: datetime, window: timedelta = WINDOW,
                       min_prob: float = MIN_PROB) -> dict[str, float]:
    num: dict[str, float] = defaultdict(float)
    den: dict[str, float] = defaultdict(float)
    for tr in trades:
        if t - window < tr.timestamp <= t and tr.value > 0:
            num[tr.token] += tr.value * tr.prob
            den[tr.token] += tr.value
    out = {}
    for tok in sorted(den):
        p = num[tok] / den[tok]
        if p > min_prob:
            out[tok] = p
    return out


@dataclass(frozen=True)
class ImpliedPathPoint:
    t: datetime
    mu_t: float
    sigma_t: float
    tokens_used: int
    fit_residual: float


def implied_cpi_path(group: dict[str, BucketSpec], trades: Sequence[CpiTrade], grid: Iterable[datetime],
                     window: timedelta = WINDOW, min_prob: float = MIN_PROB,
                     sigma_floor: float = SIGMA_FLOOR) -> list[ImpliedPathPoint]:
    """Fit the implied distribution at each grid time.

    `group` maps a bucket market id to its range. Retained buckets enter with their
    normalized probabilities, the rest of the partition with zero mass.
    """
    tokens = sorted(group, key=lambda k: (group[k].lower, group[k].upper))
    buckets = [group[k] for k in tokens]
    relevant = [tr for tr in trades if tr.token in group]
    relevant.sort(key=lambda tr: tr.timestamp)
    stamps = [tr.timestamp for tr in relevant]
    out = []
    for t in grid:
        i = bisect.bisect_right(stamps, t - window)
        j = bisect.bisect_right(stamps, t)
        snap = cpi_token_snapshot(relevant[i:j], t, window, min_prob)
        if len(snap) < 2:
            continue
        obs = [snap.get(k, 0.0) for k in tokens]
        try:
            fit = fit_gaussian_to_buckets(buckets, obs, sigma_floor=sigma_floor)
        except FitDegenerate:
            continue
        out.append(ImpliedPathPoint(t, fit.mu, fit.sigma, len(snap), fit.residual))
    return out


def time_grid(start: datetime, end: datetime, step: timedelta = timedelta(hours=1)) -> list[datetime]:
    out = []
    t = start
    while t <= end:
        out.append(t)
        t += step
    return out


def bucket_groups(markets: Iterable[MarketRecord], resolution: float = 0.1) -> dict[str, dict[str, BucketSpec]]:
    """Group bucket markets by event slug.

    Titles without a bucket label are skipped, as are groups that do not partition the line.
    """
    groups: dict[str, dict[str, BucketSpec]] = defaultdict(dict)
    for m in markets:
        if not m.metadata.event_slug:
            continue
        try:
            spec = parse_bucket_label(m.metadata.title, resolution)
        except ValueError:
            continue
        groups[m.metadata.event_slug][m.condition_id] = spec
    return {k: v for k, v in groups.items() if len(v) >= 2 and is_partition(v.values())}


def is_partition(buckets: Iterable[BucketSpec]) -> bool:
    """True when the ranges tile the whole real line without gaps or overlaps."""
    ordered = sorted(buckets, key=lambda b: b.lower)
    if not ordered or ordered[0].lower != -INF or ordered[-1].upper != INF:
        return False
    return all(math.isclose(a.upper, b.lower, abs_tol=1e-9) for a, b in zip(ordered, ordered[1:]))
