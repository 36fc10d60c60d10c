from __future__ import annotations

import json
from collections import Counter

import pytest

from pmlife.errors import InvalidConfig, SourceUnavailable, UnknownBlock
from pmlife.model import OracleEventType, to_record, dumps
from pmlife.resolution import REQUEST_ID_KEY
from pmlife.sources import (FixtureSource, Layer, LiveSource, SimConfig, SourceCursor, UniverseSource,
                            generate_lifecycle, load_universe, origin, write_universe)
from pmlife.sources.cpi_fixture import CpiFixtureConfig, generate_cpi_universe


def _serial(u):
    return ([dumps(to_record(m)) for _, m in u.markets], [dumps(to_record(f)) for f in u.fills],
            [dumps(to_record(e)) for e in u.oracle_events], [dumps(to_record(r)) for r in u.registrations])


def test_same_seed_same_universe():
    a = generate_lifecycle(SimConfig(seed=3, n_markets=40))
    b = generate_lifecycle(SimConfig(seed=3, n_markets=40))
    assert _serial(a) == _serial(b)
    assert _serial(a) != _serial(generate_lifecycle(SimConfig(seed=4, n_markets=40)))


def test_empty_universe():
    u = generate_lifecycle(SimConfig(n_markets=0))
    assert u.markets == [] and u.fills == [] and u.oracle_events == []


def test_dispute_share_binomial_bound():
    u = generate_lifecycle(SimConfig(seed=1, n_markets=1000, dispute_rate=0.5, trades_per_market=(2.0, 0.0)))
    assert 0.45 <= len(u.truth["disputed"]) / 1000 <= 0.55


def test_withheld_and_delayed_counts_exact():
    u = generate_lifecycle(SimConfig(seed=2, n_markets=50, withheld_fraction=0.2, delayed_fraction=0.1))
    assert len(u.truth["withheld"]) == 10 and len(u.truth["delayed"]) == 5
    assert len(u.markets) == 40
    listed = {m.condition_id for _, m in u.markets}
    assert not listed & set(u.truth["withheld"])


def test_stripped_events_lose_direct_identifiers():
    u = generate_lifecycle(SimConfig(seed=5, n_markets=50, dispute_rate=0.0, indirect_oracle_fraction=0.3))
    assert len(u.oracle_events) == 200
    stripped = {tuple(k) for k in u.truth["stripped_events"]}
    assert len(stripped) == 60
    negrisk = set(u.truth["negrisk"])
    for e in u.oracle_events:
        if (e.tx_hash, e.log_index) not in stripped:
            assert e.condition_id is not None
            continue
        assert e.event_type is not OracleEventType.INITIALIZE and e.condition_id is None
        if e.question_id is None:
            assert REQUEST_ID_KEY in e.meta


def test_oracle_lifecycle_order_per_market():
    u = generate_lifecycle(SimConfig(seed=8, n_markets=30, dispute_rate=0.5))
    inits = {e.question_id: e.condition_id for e in u.oracle_events if e.event_type is OracleEventType.INITIALIZE}
    chains = {}
    for e in u.oracle_events:
        cond = e.condition_id or inits.get(e.question_id)
        if cond:
            chains.setdefault(cond, []).append(e.event_type.value)
    for cond, chain in chains.items():
        assert chain[0] == "initialize" and chain[-1] == "settle"
        if "dispute" in chain:
            i = chain.index("dispute")
            assert chain[i - 1] == "propose" and "propose" in chain[i + 1:]


def test_fee_regime_steps():
    cfg = SimConfig()
    assert cfg.fee_rate("Crypto", 0) == 0.0
    assert cfg.fee_rate("Crypto", 7) == 0.02
    assert cfg.fee_rate("Crypto", 30) == 0.02
    assert cfg.fee_rate("Sports", 13) == 0.0 and cfg.fee_rate("Sports", 14) == 0.01


@pytest.mark.parametrize("bad", [dict(dispute_rate=1.5), dict(n_markets=-1), dict(withheld_fraction=0.7, delayed_fraction=0.5),
                                 dict(fee_regime=((5, {}), (1, {})))])
def test_invalid_config(bad):
    with pytest.raises(InvalidConfig):
        SimConfig(**bad).validate()


def test_log_positions_unique_and_ordered():
    u = generate_lifecycle(SimConfig(seed=9, n_markets=60))
    keys = [(f.block_number, f.log_index) for f in u.fills] + \
           [(e.block_number, e.log_index) for e in u.oracle_events] + \
           [(r.block_number, r.log_index) for r in u.registrations]
    assert len(keys) == len(set(keys))


def test_universe_source_cursors():
    u = generate_lifecycle(SimConfig(seed=1, n_markets=30))
    src = UniverseSource(u)
    mid = u.head // 2
    first, c1 = src.poll_markets(origin(Layer.MARKET), mid)
    rest, c2 = src.poll_markets(c1)
    assert len(first) + len(rest) == len(u.markets)
    assert src.poll_markets(c2) == ([], c2)
    fills = src.poll_fills(0, mid) + src.poll_fills(mid + 1, u.head)
    assert fills == u.fills
    with pytest.raises(UnknownBlock):
        src.block_timestamp(u.head + 1)


def test_cursor_never_moves_back():
    c = SourceCursor(Layer.FILL, 10)
    assert c.advanced(5).position == 10 and c.advanced(12).position == 12
    assert origin("fill").position == -1 and origin("market").position == 0


def test_fixture_round_trip(tmp_path):
    u = generate_lifecycle(SimConfig(seed=4, n_markets=25, withheld_fraction=0.2))
    write_universe(u, tmp_path / "a")
    loaded, bad = load_universe(tmp_path / "a")
    assert bad == []
    assert _serial(loaded) == _serial(u)
    assert [b for b, _ in loaded.markets] == [b for b, _ in u.markets]
    write_universe(loaded, tmp_path / "b")
    for name in ("markets.jsonl", "fills.jsonl", "oracle_events.jsonl", "registrations.jsonl", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_fixture_bad_lines_quarantined(tmp_path):
    u = generate_lifecycle(SimConfig(seed=4, n_markets=5))
    write_universe(u, tmp_path)
    with open(tmp_path / "fills.jsonl", "a") as fh:
        fh.write("{not json\n")
        fh.write(json.dumps({"tx_hash": "0x1"}) + "\n")
    src = FixtureSource(tmp_path)
    assert len(src.universe.fills) == len(u.fills)
    assert Counter(q.layer for q in src.drain_quarantine()) == {"fill": 2}
    assert src.drain_quarantine() == []


def test_live_source_fails_without_client():
    with pytest.raises(SourceUnavailable):
        LiveSource().head_block()


def test_cpi_fixture_prices_match_masses():
    from pmlife.analytics.cpi import parse_bucket_label, partition_masses
    cfg = CpiFixtureConfig(days=3)
    u = generate_cpi_universe(cfg)
    buckets = {}
    for _, m in u.markets:
        spec = parse_bucket_label(m.metadata.title)
        buckets[m.tokens()[0]] = (spec, True)
        buckets[m.tokens()[1]] = (spec, False)
    assert len(u.fills) == 3 * len(cfg.labels) * cfg.trades_per_day
    for f in u.fills:
        day = u.timestamp(f.block_number).day - 1
        spec, is_yes = buckets[f.asset_id]
        mass = partition_masses(cfg.mu_on(day), cfg.sigma, [spec])[0]
        p = f.price if is_yes else 1 - f.price
        assert abs(p - mass) <= 5e-7 + 1e-12
