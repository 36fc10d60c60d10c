"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run directly with `python tests/test_acceptance.py` or via pytest; the terminal
summary prints one PASS/FAIL line per criterion.
"""
from __future__ import annotations

import itertools
import math
import random
import time
from collections import defaultdict
from datetime import date, timedelta
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from pmlife.analytics.calibration import LOG_EPS, calibration_metrics, isotonic_fit
from pmlife.analytics.cpi import (bucket_groups, implied_cpi_path, normal_cdf, parse_bucket_label,
                                  partition_masses, fit_gaussian_to_buckets, time_grid, trades_from_fills)
from pmlife.analytics.fees import fee_rates, pooled_rate
from pmlife.analytics.oracle_risk import post_anchor_histogram, risk_anchors
from pmlife.analytics.stats import anova_oneway, kruskal_wallis, pearson_r
from pmlife.ingestion import SyncEngine, Toggles
from pmlife.model import OracleEventType, format_ts
from pmlife.resolution import LinkPath
from pmlife.sources import SimConfig, UniverseSource, generate_lifecycle
from pmlife.sources.cpi_fixture import DEFAULT_LABELS, CpiFixtureConfig, generate_cpi_universe
from pmlife.storage import MarketDaySummary, Store

from builders import at, event, fill, h, market

criterion = pytest.mark.criterion


def sync_store(universe, toggles=Toggles(), **kw) -> Store:
    store = Store()
    SyncEngine(store, UniverseSource(universe), toggles, **kw).run()
    return store


# -- 1 ----------------------------------------------------------------------

@criterion(1, "replay safety with 50% overlapping windows")
def test_replay_safety():
    t0 = time.perf_counter()
    u = generate_lifecycle(SimConfig(seed=101, n_markets=1000, dispute_rate=0.1, indirect_oracle_fraction=0.1))
    once = sync_store(u)
    replay = Store()
    SyncEngine(replay, UniverseSource(u)).backfill(0, u.head, window=100_000, step=50_000)
    # cursors legitimately differ between the two drivers; every data relation must not
    assert once.dump(exclude=["sync_state"]) == replay.dump(exclude=["sync_state"])
    before = once.dump()
    SyncEngine(once, UniverseSource(u)).backfill(0, u.head, window=100_000, step=50_000)
    after = once.dump()
    assert {k: v for k, v in after.items() if k != "sync_state"} == \
           {k: v for k, v in before.items() if k != "sync_state"}
    assert len(once.fills()) == u.truth["fill_count"]
    assert time.perf_counter() - t0 < 60.0


# -- 2 ----------------------------------------------------------------------

class Crash(Exception):
    pass


SLOTS = ("market", "fill", "oracle", "end")


@criterion(2, "resume equivalence over 20 random crash points")
def test_resume_equivalence(tmp_path, small_universe):
    kw = dict(blocks_per_cycle=100_000)
    ref = sync_store(small_universe, **kw)
    ref.materialize_summaries()
    ref_quality = ref.compute_quality().to_dict()
    ref_dump = ref.dump()
    n_cycles = math.ceil((small_universe.head + 1) / kw["blocks_per_cycle"])
    points = [(c, s) for c in range(1, n_cycles + 1) for s in SLOTS]
    rng = random.Random(2024)
    chosen = rng.sample(points, 20)
    for i, (cycle, slot) in enumerate(chosen):
        path = tmp_path / f"crash{i}.db"
        store = Store(path)
        if slot == "end":
            SyncEngine(store, UniverseSource(small_universe), **kw).run(cycle)
        else:
            holder = {}

            def hook(layer, cycle=cycle, slot=slot, holder=holder):
                if layer == slot and holder["engine"].state.cycle_count + 1 == cycle:
                    raise Crash

            engine = SyncEngine(store, UniverseSource(small_universe), after_commit=hook, **kw)
            holder["engine"] = engine
            with pytest.raises(Crash):
                engine.run()
        store.close()
        store = Store(path)
        SyncEngine(store, UniverseSource(small_universe), **kw).run()
        store.materialize_summaries()
        assert store.compute_quality().to_dict() == ref_quality, (cycle, slot)
        assert store.dump() == ref_dump, (cycle, slot)
        store.close()


# -- 3 ----------------------------------------------------------------------

@criterion(3, "recovery ablation: API-only about 20%, with recovery 100%")
def test_recovery_ablation():
    u = generate_lifecycle(SimConfig(seed=33, n_markets=100, withheld_fraction=0.8))
    withheld = set(u.truth["withheld"])
    assert len(withheld) == 80
    traded = {f.asset_id for f in u.fills}
    expected = sum(1 for a in traded if u.truth["token_market"][a] not in withheld)

    api_only = sync_store(u, Toggles(onchain_recovery=False)).compute_quality()
    assert api_only.traded_assets == len(traded)
    assert api_only.resolved_assets == expected
    assert abs(api_only.token_resolution_rate - 0.2) < 0.05

    full = sync_store(u).compute_quality()
    assert full.resolved_assets == len(traded) and full.token_resolution_rate == 1.0


# -- 4 ----------------------------------------------------------------------

@criterion(4, "bridge ablation: direct-only 70%, full 100%, monotone in paths")
def test_bridge_ablation():
    u = generate_lifecycle(SimConfig(seed=44, n_markets=50, dispute_rate=0.0, indirect_oracle_fraction=0.3,
                                     negrisk_fraction=0.3))
    assert len(u.oracle_events) == 200
    rates = {}
    for k in range(len(LinkPath) + 1):
        for subset in itertools.combinations(list(LinkPath), k):
            rep = sync_store(u, Toggles().with_paths(subset)).compute_quality()
            assert rep.total_oracle_events == 200
            rates[frozenset(subset)] = Fraction(rep.linked_oracle_events, rep.total_oracle_events)
    assert rates[frozenset({LinkPath.DIRECT})] == Fraction(7, 10)
    assert rates[frozenset(LinkPath)] == 1
    for a, b in itertools.product(rates, rates):
        if a <= b:
            assert rates[a] <= rates[b], (a, b)


# -- 5 ----------------------------------------------------------------------

def _random_store(rng: random.Random):
    store = Store()
    budget = rng.randint(0, 50)
    n_markets = rng.randint(0, min(8, budget))
    mids = [h(i) for i in range(n_markets)]
    for i in range(n_markets):
        store.upsert_market(market(i))
    ghosts = [h(900 + i) for i in range(3)]
    pool = [h(500 + i, 20) for i in range(6)]
    fills, events, sums = [], [], []
    extra = {"pending": 0, "exhausted": 0, "quarantined": 0, "conflicts": 0}
    used = n_markets
    kinds = list(OracleEventType)
    while used < budget:
        used += 1
        choice = rng.random()
        target = rng.choice([None] + mids + ghosts) if mids else rng.choice([None] + ghosts)
        if choice < 0.45:
            f = fill(len(fills) + 1, str(rng.randint(1, 9)), market_id=target, maker=rng.choice(pool),
                     taker=rng.choice(pool), ts=at(rng.randint(0, 100)))
            store.insert_fill(f)
            fills.append(f)
        elif choice < 0.8:
            e = event(len(events) + 1, rng.choice(kinds), at(rng.randint(0, 100)), market_id=target)
            store.insert_oracle_event(e, "direct" if target else None)
            events.append(e)
        elif choice < 0.9 and target is not None:
            s = MarketDaySummary(target, date(2025, 1, 1) + timedelta(days=len(sums)), 1, 10, 0, 1)
            store.insert_summary(s)
            sums.append(s)
        else:
            r = rng.random()
            if r < 0.4:
                asset = f"r{used}"
                store.enqueue_retry(asset, used, 1)
                exhausted = rng.random() < 0.5
                if exhausted:
                    store.retry_attempted(asset, True)
                extra["exhausted" if exhausted else "pending"] += 1
            elif r < 0.7:
                store.quarantine("fill", used, "ZERO_AMOUNT")
                extra["quarantined"] += 1
            else:
                store.record_conflicts([(f"c{used}", "clob", "onchain")])
                extra["conflicts"] += 1
    return store, set(mids), fills, events, sums, extra


def _rate(a, b):
    return a / b if b else None


@criterion(5, "quality report matches brute-force recount")
def test_quality_report_bruteforce(synced_store):
    rng = random.Random(55)
    for _ in range(200):
        store, mids, fills, events, sums, extra = _random_store(rng)
        rep = store.compute_quality()
        assert rep.total_markets == len(mids)
        assert rep.traded_markets == len({f.market_id for f in fills if f.market_id in mids})
        assert rep.oracle_linked_markets == len({e.market_id for e in events if e.market_id in mids})
        assert rep.total_fills == len(fills)
        assert rep.unlinked_fills == sum(f.market_id is None for f in fills)
        assert rep.total_oracle_events == len(events)
        assert rep.linked_oracle_events == sum(e.market_id is not None for e in events)
        for et in OracleEventType:
            group = [e for e in events if e.event_type is et]
            assert rep.event_type_counts[et.value] == (sum(e.market_id is not None for e in group), len(group))
            assert rep.event_type_rate(et.value) == _rate(sum(e.market_id is not None for e in group), len(group))
        assert rep.active_addresses == len({f.maker for f in fills} | {f.taker for f in fills})
        assert rep.market_day_rows == len(sums)
        broken = sum(s.market_id not in mids for s in sums) + \
            sum(e.market_id is not None and e.market_id not in mids for e in events)
        assert rep.broken_reference_count == broken
        traded = {f.asset_id for f in fills}
        resolved = {f.asset_id for f in fills if f.market_id is not None}
        assert (rep.traded_assets, rep.resolved_assets) == (len(traded), len(resolved))
        assert rep.traded_rate == _rate(rep.traded_markets, len(mids))
        assert rep.oracle_linked_rate == _rate(rep.oracle_linked_markets, len(mids))
        assert rep.linked_oracle_rate == _rate(rep.linked_oracle_events, len(events))
        assert rep.token_resolution_rate == _rate(len(resolved), len(traded))
        assert (rep.retry_pending, rep.retry_exhausted) == (extra["pending"], extra["exhausted"])
        assert (rep.quarantined, rep.bridge_conflicts) == (extra["quarantined"], extra["conflicts"])
        store.close()
    assert synced_store.compute_quality().broken_reference_count == 0


# -- 6 ----------------------------------------------------------------------

FAREY = sorted({Fraction(k, m) for m in range(1, 9) for k in range(m + 1)})
_COMBOS: dict[int, np.ndarray] = {}


def _combos(u: int) -> np.ndarray:
    if u not in _COMBOS:
        vals = np.array([float(v) for v in FAREY])
        idx = np.array(list(itertools.combinations_with_replacement(range(len(vals)), u)))
        _COMBOS[u] = vals[idx]
    return _COMBOS[u]


def _exhaustive_sse(x, y) -> float:
    keys = sorted(set(x))
    n = np.array([sum(1 for xi in x if xi == k) for k in keys], float)
    s = np.array([sum(yi for xi, yi in zip(x, y) if xi == k) for k in keys], float)
    q = s.copy()  # binary labels: sum of squares equals sum
    c = _combos(len(keys))
    sse = (n * c * c - 2 * s * c + q).sum(axis=1)
    return float(sse.min())


@criterion(6, "PAVA equals exhaustive monotone search; calibrated Brier not worse")
def test_isotonic_oracle():
    rng = random.Random(66)
    for _ in range(500):
        n = rng.randint(1, 8)
        x = [rng.randint(0, 4) * 0.25 for _ in range(n)]
        y = [rng.randint(0, 1) for _ in range(n)]
        fit = isotonic_fit(x, y)
        pred = fit.predict(x)
        order = sorted(range(n), key=lambda i: x[i])
        assert all(pred[a] <= pred[b] for a, b in zip(order, order[1:]))
        ours = math.fsum((p - t) ** 2 for p, t in zip(pred, y))
        assert abs(ours - _exhaustive_sse(x, y)) <= 1e-12
    for _ in range(100):
        n = rng.randint(1, 40)
        x = [rng.random() for _ in range(n)]
        y = [rng.randint(0, 1) for _ in range(n)]
        pred = isotonic_fit(x, y).predict(x)
        assert calibration_metrics(pred, y).brier <= calibration_metrics(x, y).brier


# -- 7 ----------------------------------------------------------------------

def _hand_metrics(p, y, nb):
    n = len(p)
    brier = sum((a - b) ** 2 for a, b in zip(p, y)) / n
    ll = 0.0
    for a, b in zip(p, y):
        a = min(max(a, LOG_EPS), 1 - LOG_EPS)
        ll -= math.log(a) if b else math.log(1 - a)
    ll /= n
    bins = defaultdict(list)
    for a, b in zip(p, y):
        k = sum(1 for j in range(1, nb) if j / nb <= a)
        bins[k].append((a, b))
    ece = mce = 0.0
    for members in bins.values():
        conf = sum(a for a, _ in members) / len(members)
        acc = sum(b for _, b in members) / len(members)
        ece += len(members) / n * abs(acc - conf)
        mce = max(mce, abs(acc - conf))
    return brier, ll, ece, mce


@criterion(7, "calibration metrics match direct-formula oracle")
def test_calibration_metrics_oracle():
    rng = random.Random(77)
    for _ in range(100):
        n = rng.randint(1, 30)
        nb = rng.choice([5, 10, 20])
        p = [rng.choice([rng.random(), rng.randint(0, nb) / nb, 0.0, 1.0]) for _ in range(n)]
        y = [rng.randint(0, 1) for _ in range(n)]
        rep = calibration_metrics(p, y, nb)
        brier, ll, ece, mce = _hand_metrics(p, y, nb)
        assert abs(rep.brier - brier) <= 1e-12
        assert abs(rep.log_loss - ll) <= 1e-12 * max(1.0, abs(ll))
        assert abs(rep.ece - ece) <= 1e-12
        assert abs(rep.mce - mce) <= 1e-12
        assert sum(b.count for b in rep.bins) == n


# -- 8 ----------------------------------------------------------------------

def _phi_series(x: float) -> mpmath.mpf:
    with mpmath.workdps(80):
        z = mpmath.mpf(x) / mpmath.sqrt(2)
        term = z
        total = z
        k = 0
        while True:
            k += 1
            term = -term * z * z / k
            add = term / (2 * k + 1)
            total += add
            if abs(add) < mpmath.mpf(10) ** -70:
                break
        erf = 2 / mpmath.sqrt(mpmath.pi) * total
        return (1 + erf) / 2


@criterion(8, "Gaussian bucket fit round trip and normal CDF accuracy")
def test_gaussian_round_trip():
    buckets = [parse_bucket_label(lbl) for lbl in DEFAULT_LABELS]
    rng = np.random.default_rng(88)
    for _ in range(200):
        mu = float(rng.uniform(0.0, 0.4))
        sigma = float(rng.uniform(0.02, 1.0))
        masses = partition_masses(mu, sigma, buckets)
        assert abs(math.fsum(masses) - 1.0) <= 1e-9
        fit = fit_gaussian_to_buckets(buckets, masses)
        assert abs(fit.mu - mu) <= 1e-3 and abs(fit.sigma - sigma) <= 1e-3, (mu, sigma, fit)
    for x in np.linspace(-8.0, 8.0, 1000):
        assert abs(normal_cdf(float(x)) - float(_phi_series(float(x)))) <= 1e-10


# -- 9 ----------------------------------------------------------------------

@criterion(9, "statistics hand values and affine invariance")
def test_statistics():
    assert anova_oneway([[1, 2, 3], [4, 5, 6]]).f == 13.5
    assert abs(pearson_r([1, 2, 3], [1, 2, 4]) - 9 / math.sqrt(84)) <= 1e-9
    assert abs(pearson_r([1, 2, 3, 4], [4, 3, 2, 1]) + 1.0) <= 1e-9
    assert abs(kruskal_wallis([[1, 2], [3, 4]]).h - 2.4) <= 1e-9
    # ranks 1 | 3,3,3 | 5 with tie correction 1 - 24/120
    assert abs(kruskal_wallis([[1, 2, 2], [2, 3]]).h - (4 / 3) / 0.8) <= 1e-9
    rng = np.random.default_rng(99)
    for _ in range(100):
        x = rng.normal(size=12)
        y = 0.5 * x + rng.normal(size=12)
        a, c = rng.uniform(0.1, 10, size=2)
        b, d = rng.uniform(-50, 50, size=2)
        r = pearson_r(x.tolist(), y.tolist())
        assert abs(pearson_r((a * x + b).tolist(), (c * y + d).tolist()) - r) <= 1e-9
        assert abs(pearson_r((-a * x + b).tolist(), y.tolist()) + r) <= 1e-9
        groups = [rng.normal(loc=m, size=int(rng.integers(2, 8))) for m in rng.uniform(-1, 1, size=3)]
        f = anova_oneway([g.tolist() for g in groups]).f
        assert abs(anova_oneway([(a * g + b).tolist() for g in groups]).f - f) <= 1e-9 * max(1.0, f)
        hk = kruskal_wallis([g.tolist() for g in groups]).h
        assert abs(kruskal_wallis([(a * g + b).tolist() for g in groups]).h - hk) <= 1e-9


# -- 10 ---------------------------------------------------------------------

@criterion(10, "oracle-risk anchors, flags and histograms match brute force")
def test_oracle_risk_bruteforce():
    u = generate_lifecycle(SimConfig(seed=1010, n_markets=100, dispute_rate=0.5))
    store = sync_store(u)
    events, fills = store.oracle_events(), store.fills()
    anchors = risk_anchors(events, fills)
    window = timedelta(hours=24)
    by_market = defaultdict(list)
    for e in events:
        if e.market_id is not None:
            by_market[e.market_id].append(e)
    expected = {}
    for mid, evs in by_market.items():
        disputes = sorted(e.timestamp for e in evs if e.event_type is OracleEventType.DISPUTE)
        proposes = sorted(e.timestamp for e in evs if e.event_type is OracleEventType.PROPOSE)
        if disputes:
            expected[mid] = (disputes[0], "first_dispute")
        elif proposes:
            expected[mid] = (proposes[-1], "last_propose")
    assert {a.market_id: (a.anchor_time, a.anchor_kind.value) for a in anchors} == expected
    assert sum(k == "first_dispute" for _, k in expected.values()) == len(u.truth["disputed"])

    hourly = [0] * 24
    first = {}
    for f in fills:
        if f.market_id not in expected:
            continue
        secs = (f.meta.timestamp - expected[f.market_id][0]).total_seconds()
        if 0 < secs <= 24 * 3600:
            hourly[next(k for k in range(24) if secs <= (k + 1) * 3600 and (secs < (k + 1) * 3600 or k == 23))] += 1
            first[f.market_id] = min(first.get(f.market_id, secs), secs)
    for a in anchors:
        assert a.continued_betting == (a.market_id in first)
        if a.market_id in first:
            assert a.first_trade_delay_hours == first[a.market_id] / 3600
    stats = post_anchor_histogram(anchors, fills, window)
    hist = [0] * 24
    for secs in first.values():
        hist[next(k for k in range(24) if secs < (k + 1) * 3600 or k == 23)] += 1
    assert list(stats.hourly_trades) == hourly
    assert list(stats.first_trade_hist) == hist
    assert stats.cohort == len(expected) and stats.resumed == len(first)
    running = 0
    for k in range(24):
        running += hist[k]
        assert stats.cumulative[k] == running / len(expected)
    assert all(a <= b for a, b in zip(stats.cumulative, stats.cumulative[1:]))
    assert 0 < stats.resumed < stats.cohort


# -- 11 ---------------------------------------------------------------------

@criterion(11, "fee rates match brute force; pooled Crypto ratio 0.08026")
def test_fee_analytics(synced_store):
    fills = synced_store.fills()
    per_day = defaultdict(lambda: [0, 0])
    for f in fills:
        if f.market_id is not None:
            acc = per_day[(f.market_id, f.meta.timestamp.date())]
            acc[0] += f.collateral_amount
            acc[1] += f.fee
    expected = {}
    for mid in {m for m, _ in per_day}:
        pos = [v for (m, _), v in per_day.items() if m == mid and v[1] > 0]
        if pos:
            expected[mid] = sum(v[1] for v in pos) / sum(v[0] for v in pos)
    rows = fee_rates(synced_store.summaries(), {})
    assert {r.market_id: r.rate for r in rows} == expected
    assert expected and all(0 <= r <= 1 for r in expected.values())
    assert abs(pooled_rate(5.7030e9, 4.576785e8) - 0.08026) <= 1e-5


# -- 12 ---------------------------------------------------------------------

@criterion(12, "end-to-end CPI implied path within 2e-3 of the drifting mean")
def test_cpi_end_to_end():
    t0 = time.perf_counter()
    cfg = CpiFixtureConfig()
    u = generate_cpi_universe(cfg)
    store = sync_store(u)
    markets = store.markets()
    groups = bucket_groups(markets)
    group = groups[cfg.event_slug]
    yes = {m.condition_id: m.yes_token for m in markets}
    trades = trades_from_fills(store.fills(), yes)
    start = min(tr.timestamp for tr in trades)
    day0 = start.replace(hour=0, minute=0, second=0, microsecond=0)
    grid = time_grid(day0 + timedelta(days=1), day0 + timedelta(days=cfg.days), timedelta(days=1))
    path = implied_cpi_path(group, trades, grid, timedelta(hours=24))
    truth = u.truth["mu"]
    assert len(path) == cfg.days
    for pt in path:
        assert pt.tokens_used >= 2
        mu = truth[format_ts(pt.t)]
        assert abs(pt.mu_t - mu) <= 2e-3, (pt.t, pt.mu_t, mu)
    assert time.perf_counter() - t0 < 30.0


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
