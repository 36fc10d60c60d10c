"""Seeded lifecycle simulator: markets, fills, registrations and oracle events."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import timedelta

import numpy as np

from ..errors import InvalidConfig
from ..model import (BASE_UNIT, Exchange, FillMeta, FillRecord, MarketMetadata,
                     MarketRecord, OracleEvent, OracleEventType, Provenance, Side,
                     TokenRegistration, parse_ts)
from ..resolution import REQUEST_ID_KEY
from .base import Universe

CATEGORIES = ("Sports", "Crypto", "Politics", "Games", "Science", "Culture", "Economics")
CATEGORY_WEIGHTS = (0.40, 0.30, 0.10, 0.05, 0.05, 0.05, 0.05)
SUBTAGS = {
    "Sports": ("NBA", "Soccer", "NFL"),
    "Crypto": ("Bitcoin", "Ethereum", "Solana"),
    "Politics": ("Elections", "Congress"),
    "Games": ("Esports",),
    "Science": ("Space",),
    "Culture": ("Movies", "Music"),
    "Economics": ("CPI", "Fed"),
}
NBA_TEAMS = ("Lakers", "Celtics", "Warriors", "Knicks", "Bulls", "Heat", "Nuggets", "Suns")

CTF_ADAPTER = "0x" + "6a9d2222" * 5
NEGRISK_ADAPTER = "0x" + "2f5e3684" * 5
OPTIMISTIC_ORACLE = "0x" + "ee3afe34" * 5
ADAPTER_FOR = {Exchange.CTF: CTF_ADAPTER, Exchange.NEGRISK: NEGRISK_ADAPTER}

DEFAULT_FEE_REGIME = ((0, {}), (7, {"Crypto": 0.02}), (14, {"Sports": 0.01, "Culture": 0.005}))


@dataclass
class SimConfig:
    seed: int = 7
    n_markets: int = 20
    dispute_rate: float = 0.05
    fee_regime: tuple = DEFAULT_FEE_REGIME
    trades_per_market: tuple[float, float] = (12.0, 0.5)
    horizon_days: int = 30
    withheld_fraction: float = 0.0
    delayed_fraction: float = 0.0
    indirect_oracle_fraction: float = 0.0
    negrisk_fraction: float = 0.2
    corrupt_fills: int = 0
    block_seconds: int = 2
    start_time: str = "2025-01-01T00:00:00Z"

    def validate(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be a 64-bit unsigned integer")
        if self.n_markets < 0:
            raise InvalidConfig("n_markets must be non-negative")
        for name in ("dispute_rate", "withheld_fraction", "delayed_fraction",
                     "indirect_oracle_fraction", "negrisk_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name} must be in [0, 1], got {v}")
        if self.withheld_fraction + self.delayed_fraction > 1.0:
            raise InvalidConfig("withheld_fraction + delayed_fraction exceeds 1")
        if self.horizon_days < 1:
            raise InvalidConfig("horizon_days must be >= 1")
        if self.block_seconds < 1:
            raise InvalidConfig("block_seconds must be >= 1")
        mean, disp = self.trades_per_market
        if mean < 1 or disp < 0:
            raise InvalidConfig("trades_per_market needs mean >= 1 and dispersion >= 0")
        last = -1
        for step in self.fee_regime:
            day, rates = step
            if day < last:
                raise InvalidConfig("fee_regime steps must be ordered by start day")
            last = day
            if any(not 0 <= r < 1 for r in rates.values()):
                raise InvalidConfig("fee rates must be in [0, 1)")

    def fee_rate(self, category: str, day: int) -> float:
        rate = 0.0
        for start, rates in self.fee_regime:
            if start > day:
                break
            if category in rates:
                rate = rates[category]
        return rate


def _hex(rng, nbytes):
    return "0x" + rng.bytes(nbytes).hex()


def _token(rng):
    return str(int.from_bytes(rng.bytes(32), "big"))


@dataclass
class _Log:
    block: int
    rank: int
    seq: int
    build: object = field(compare=False)


def generate_lifecycle(config: SimConfig) -> Universe:
    """Build the full event universe for `config`; identical seeds give identical universes."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    start = parse_ts(config.start_time)
    bs = config.block_seconds
    horizon_s = config.horizon_days * 86400
    head = horizon_s // bs

    def block_of(sec):
        return min(head, int(sec // bs))

    n = config.n_markets
    order = rng.permutation(n) if n else np.array([], dtype=int)
    n_withheld = round(config.withheld_fraction * n)
    n_delayed = round(config.delayed_fraction * n)
    withheld_idx = set(order[:n_withheld].tolist())
    delayed_idx = set(order[n_withheld:n_withheld + n_delayed].tolist())

    n_wallets = max(20, 4 * n)
    wallets = [_hex(rng, 20) for _ in range(n_wallets)]

    logs: list[_Log] = []
    seq = 0
    markets = []
    truth = {
        "withheld": [], "delayed": [], "disputed": [], "category": {}, "outcome": {},
        "token_market": {}, "stripped_events": [], "fill_count": 0, "listing_block": {},
        "negrisk": [],
    }
    oracle_scale = min(1.0, 0.3 * config.horizon_days * 24 / 48)
    mean, disp = config.trades_per_market
    gen_oracle = []  # (block, seq, builder kwargs)

    for i in range(n):
        category = CATEGORIES[rng.choice(len(CATEGORIES), p=CATEGORY_WEIGHTS)]
        subtags = SUBTAGS[category]
        sub = subtags[rng.integers(len(subtags))]
        tags = (sub, category) if rng.random() < 0.5 else (category, sub)
        exchange = Exchange.NEGRISK if rng.random() < config.negrisk_fraction else Exchange.CTF
        condition_id = _hex(rng, 32)
        question_id = _hex(rng, 32)
        yes, no = _token(rng), _token(rng)
        use_clob = rng.random() < 0.7
        q_true = float(rng.beta(2.0, 2.0))
        outcome_yes = bool(rng.random() < q_true)
        disputed = bool(rng.random() < config.dispute_rate)

        listed_s = float(rng.uniform(0.0, 0.4)) * horizon_s
        end_s = listed_s + float(rng.uniform(0.05, 0.3)) * horizon_s
        propose_s = end_s + float(rng.uniform(0.5, 6.0)) * 3600 * oracle_scale
        chain = [(OracleEventType.REQUEST, end_s), (OracleEventType.PROPOSE, propose_s)]
        if disputed:
            dispute_s = propose_s + float(rng.uniform(0.5, 12.0)) * 3600 * oracle_scale
            repropose_s = dispute_s + float(rng.uniform(2.0, 24.0)) * 3600 * oracle_scale
            chain += [(OracleEventType.DISPUTE, dispute_s), (OracleEventType.PROPOSE, repropose_s)]
        settle_s = chain[-1][1] + 2 * 3600 * oracle_scale
        chain.append((OracleEventType.SETTLE, settle_s))

        listed_b = block_of(listed_s)
        settle_b = block_of(settle_s)

        if sub == "NBA":
            a, b = rng.choice(len(NBA_TEAMS), size=2, replace=False)
            title = f"{NBA_TEAMS[a]} vs. {NBA_TEAMS[b]}"
        else:
            title = f"{sub} market {i}: will it happen by day {int(end_s // 86400)}?"
        slug = f"market-{i}"
        meta = MarketMetadata(
            slug=slug, title=title, description=f"Resolves YES if {title}",
            created_at=start + timedelta(seconds=listed_b * bs),
            end_date=start + timedelta(seconds=int(end_s)),
            category=category, tags=tags, event_slug=f"event-{i // 3}",
            series_slug=f"series-{category.lower()}",
        )
        adapter = ADAPTER_FOR[exchange]
        market = MarketRecord(
            condition_id=condition_id, oracle_address=adapter, yes_token=yes, no_token=no,
            metadata=meta, gamma_id=str(500000 + i), question_id=question_id,
            clob_token_ids=(yes, no) if use_clob else None, provenance=Provenance.API,
        )
        truth["category"][condition_id] = category
        truth["outcome"][condition_id] = 1.0 if outcome_yes else 0.0
        truth["token_market"][yes] = condition_id
        truth["token_market"][no] = condition_id
        truth["listing_block"][condition_id] = listed_b
        if disputed:
            truth["disputed"].append(condition_id)
        if exchange is Exchange.NEGRISK:
            truth["negrisk"].append(condition_id)

        reg_hash = _hex(rng, 32)
        reg = dict(token0=yes, token1=no, condition_id=condition_id,
                   source_contract=exchange, block_number=listed_b, tx_hash=reg_hash)
        logs.append(_Log(listed_b, 0, seq, ("reg", reg)))
        seq += 1

        # fills
        if disp > 0:
            k = 1.0 / disp
            p = k / (k + (mean - 1))
            n_exec = 1 + int(rng.negative_binomial(k, p))
        else:
            n_exec = max(1, int(round(mean)))
        first_fill_b = None
        lo_b, hi_b = listed_b + 1, max(listed_b + 1, settle_b - 1)
        for _ in range(n_exec):
            blk = int(rng.integers(lo_b, hi_b + 1))
            first_fill_b = blk if first_fill_b is None else min(first_fill_b, blk)
            is_yes = rng.random() < 0.6
            cents = int(np.clip(round((q_true + rng.normal(0, 0.08)) * 100), 1, 99))
            if not is_yes:
                cents = 100 - cents
            asset = yes if is_yes else no
            side = Side.BUY if rng.random() < 0.5 else Side.SELL
            taker = wallets[rng.integers(n_wallets)]
            tx = _hex(rng, 32)
            day = (blk * bs) // 86400
            rate = config.fee_rate(category, day)
            n_makers = int(rng.integers(1, 4))
            for _m in range(n_makers):
                tokens = int(rng.integers(1, 500))
                token_units = tokens * BASE_UNIT
                collateral = cents * tokens * (BASE_UNIT // 100)
                maker = wallets[rng.integers(n_wallets)]
                if side is Side.BUY:
                    ma, ta = collateral, token_units
                else:
                    ma, ta = token_units, collateral
                fee = int(math.floor(rate * collateral))
                fill = dict(tx_hash=tx, block_number=blk, maker=maker, taker=taker,
                            asset_id=asset, maker_amount=ma, taker_amount=ta, fee=fee,
                            source_contract=exchange, side=side)
                logs.append(_Log(blk, 2, seq, ("fill", fill)))
                seq += 1
                truth["fill_count"] += 1

        # metadata visibility
        if i in withheld_idx:
            truth["withheld"].append(condition_id)
        else:
            meta_b = listed_b
            if i in delayed_idx:
                meta_b = min(head, (first_fill_b or listed_b) + max(1, (hi_b - (first_fill_b or lo_b)) // 2))
                truth["delayed"].append(condition_id)
            markets.append((meta_b, market))

        # oracle lifecycle
        init_meta = {}
        if exchange is Exchange.NEGRISK:
            init_meta[REQUEST_ID_KEY] = _hex(rng, 32)
        base = dict(question_id=question_id, condition_id=condition_id,
                    negrisk=exchange is Exchange.NEGRISK,
                    request_id=init_meta.get(REQUEST_ID_KEY))
        gen_oracle.append(dict(base, etype=OracleEventType.INITIALIZE, block=listed_b,
                               source=adapter, requester=adapter, actor=None,
                               ancillary=title.encode(), meta=dict(init_meta), price=None))
        outcome_price = 1.0 if outcome_yes else 0.0
        for etype, sec in chain:
            blk = block_of(sec)
            actor = None
            price = None
            if etype is OracleEventType.PROPOSE:
                actor = wallets[rng.integers(n_wallets)]
                price = outcome_price if rng.random() < 0.9 or not disputed else 1.0 - outcome_price
            elif etype is OracleEventType.DISPUTE:
                actor = wallets[rng.integers(n_wallets)]
            elif etype is OracleEventType.SETTLE:
                price = outcome_price
            gen_oracle.append(dict(base, etype=etype, block=blk, source=OPTIMISTIC_ORACLE,
                                   requester=adapter, actor=actor, ancillary=None,
                                   meta={}, price=price))

    for j in range(config.corrupt_fills):
        blk = int(rng.integers(1, head + 1))
        fill = dict(tx_hash=_hex(rng, 32), block_number=blk, maker=wallets[0], taker=wallets[1],
                    asset_id="0", maker_amount=0, taker_amount=BASE_UNIT, fee=0,
                    source_contract=Exchange.CTF, side=Side.BUY)
        logs.append(_Log(blk, 2, seq, ("fill", fill)))
        seq += 1

    # choose which non-initialize oracle events lose their direct identifiers
    n_events = len(gen_oracle)
    candidates = [k for k, e in enumerate(gen_oracle) if e["etype"] is not OracleEventType.INITIALIZE]
    n_strip = round(config.indirect_oracle_fraction * n_events)
    if n_strip > len(candidates):
        raise InvalidConfig("indirect_oracle_fraction exceeds the share of non-initialize events")
    stripped = set(rng.choice(candidates, size=n_strip, replace=False).tolist()) if n_strip else set()
    for k, e in enumerate(gen_oracle):
        e["stripped"] = k in stripped
        logs.append(_Log(e["block"], 1 if e["etype"] is OracleEventType.INITIALIZE else 3, seq, ("oracle", e)))
        seq += 1

    logs.sort(key=lambda lg: (lg.block, lg.rank, lg.seq))
    fills, events, regs = [], [], []
    log_index = 0
    prev_block = None
    for lg in logs:
        if lg.block != prev_block:
            log_index = 0
            prev_block = lg.block
        kind, d = lg.build
        if kind == "reg":
            regs.append(TokenRegistration(log_index=log_index, **d))
        elif kind == "fill":
            if d["maker_amount"] > 0:
                fills.append(FillRecord.from_amounts(log_index=log_index, **d))
            else:
                fills.append(FillRecord(
                    tx_hash=d["tx_hash"], log_index=log_index, block_number=d["block_number"],
                    maker=d["maker"], taker=d["taker"], asset_id=d["asset_id"],
                    maker_amount=0, taker_amount=d["taker_amount"], fee=0, size=0.0, price=0.0,
                    meta=FillMeta(Exchange.CTF, Side.BUY)))
        else:
            events.append(_build_event(rng, d, log_index, start, bs, truth))
        log_index += 1

    return Universe(start_time=start, block_seconds=bs, head=head, markets=markets,
                    fills=fills, oracle_events=events, registrations=regs, truth=truth)


def _build_event(rng, d, log_index, start, bs, truth) -> OracleEvent:
    etype = d["etype"]
    question_id, condition_id = d["question_id"], d["condition_id"]
    meta = dict(d["meta"])
    if d["negrisk"] and d["request_id"] and etype is not OracleEventType.INITIALIZE:
        meta[REQUEST_ID_KEY] = d["request_id"]
    tx = _hex(rng, 32)
    if d["stripped"]:
        condition_id = None
        if d["negrisk"]:
            question_id = None
        truth["stripped_events"].append((tx, log_index))
    return OracleEvent(
        tx_hash=tx, log_index=log_index, block_number=d["block"],
        timestamp=start + timedelta(seconds=d["block"] * bs), event_type=etype,
        source_contract=d["source"], requester=d["requester"], question_id=question_id,
        condition_id=condition_id, actor=d["actor"], ancillary=d["ancillary"],
        proposed_price=d["price"] if etype is OracleEventType.PROPOSE else None,
        settled_price=d["price"] if etype is OracleEventType.SETTLE else None,
        meta=meta,
    )
