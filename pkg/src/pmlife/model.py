"""Canonical market, fill and oracle records plus their line-record codec."""
from __future__ import annotations

import dataclasses
import enum
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import ZeroAmount

COLLATERAL_DECIMALS = 6
BASE_UNIT = 10**COLLATERAL_DECIMALS

_HASH_RE = re.compile(r"^0x[0-9a-f]{64}$")
_ADDR_RE = re.compile(r"^0x[0-9a-f]{40}$")
_TOKEN_RE = re.compile(r"^[0-9]+$")


class Provenance(str, enum.Enum):
    API = "api"
    ONCHAIN_RECOVERED = "onchain_recovered"


class Exchange(str, enum.Enum):
    CTF = "ctf_exchange"
    NEGRISK = "negrisk_exchange"


class Side(str, enum.Enum):
    BUY = "buy"
    SELL = "sell"


class Direction(str, enum.Enum):
    COLLATERAL_FOR_TOKEN = "collateral_for_token"
    TOKEN_FOR_COLLATERAL = "token_for_collateral"


class OracleEventType(str, enum.Enum):
    INITIALIZE = "initialize"
    REQUEST = "request"
    PROPOSE = "propose"
    DISPUTE = "dispute"
    SETTLE = "settle"


STANDARD_SETTLEMENTS = (0.0, 0.5, 1.0)


def utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_ts(ts: datetime | None) -> str | None:
    if ts is None:
        return None
    return utc(ts).replace(microsecond=0).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_ts(raw: str | None) -> datetime | None:
    if raw is None:
        return None
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    return utc(datetime.fromisoformat(raw))


@dataclass(frozen=True)
class MarketMetadata:
    slug: str
    title: str
    description: str
    created_at: datetime
    end_date: datetime | None = None
    category: str | None = None
    tags: tuple[str, ...] = ()
    event_slug: str | None = None
    series_slug: str | None = None


@dataclass(frozen=True)
class MarketRecord:
    condition_id: str
    oracle_address: str
    yes_token: str
    no_token: str
    metadata: MarketMetadata
    gamma_id: str | None = None
    question_id: str | None = None
    clob_token_ids: tuple[str, ...] | None = None
    provenance: Provenance = Provenance.API

    def tokens(self) -> tuple[str, ...]:
        """Outcome tokens, YES first, preferring the API-provided list."""
        if self.clob_token_ids:
            return tuple(self.clob_token_ids)
        return tuple(t for t in (self.yes_token, self.no_token) if t)


@dataclass(frozen=True)
class FillMeta:
    source_contract: Exchange
    side: Side
    timestamp: datetime | None = None


@dataclass(frozen=True)
class FillRecord:
    tx_hash: str
    log_index: int
    block_number: int
    maker: str
    taker: str
    asset_id: str
    maker_amount: int
    taker_amount: int
    fee: int
    size: float
    price: float
    meta: FillMeta
    market_id: str | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.tx_hash, self.log_index)

    @property
    def direction(self) -> Direction:
        return side_direction(self.meta.side)

    @property
    def collateral_amount(self) -> int:
        if self.direction is Direction.COLLATERAL_FOR_TOKEN:
            return self.maker_amount
        return self.taker_amount

    @property
    def token_amount(self) -> int:
        if self.direction is Direction.COLLATERAL_FOR_TOKEN:
            return self.taker_amount
        return self.maker_amount

    @property
    def timestamp(self) -> datetime | None:
        return self.meta.timestamp

    @classmethod
    def from_amounts(cls, tx_hash, log_index, block_number, maker, taker, asset_id,
                     maker_amount, taker_amount, fee, source_contract, side,
                     timestamp=None, market_id=None) -> "FillRecord":
        side = Side(side)
        direction = side_direction(side)
        price = derive_fill_price(maker_amount, taker_amount, direction)
        tokens = taker_amount if direction is Direction.COLLATERAL_FOR_TOKEN else maker_amount
        return cls(
            tx_hash=tx_hash, log_index=log_index, block_number=block_number,
            maker=maker, taker=taker, asset_id=asset_id,
            maker_amount=maker_amount, taker_amount=taker_amount, fee=fee,
            size=tokens / BASE_UNIT, price=price,
            meta=FillMeta(Exchange(source_contract), side, timestamp),
            market_id=market_id,
        )


@dataclass(frozen=True)
class OracleEvent:
    tx_hash: str
    log_index: int
    block_number: int
    timestamp: datetime
    event_type: OracleEventType
    source_contract: str
    requester: str | None = None
    question_id: str | None = None
    condition_id: str | None = None
    market_id: str | None = None
    actor: str | None = None
    ancillary: bytes | None = None
    proposed_price: float | None = None
    settled_price: float | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, int]:
        return (self.tx_hash, self.log_index)


@dataclass(frozen=True)
class TokenRegistration:
    token0: str
    token1: str
    condition_id: str
    source_contract: Exchange
    block_number: int
    tx_hash: str
    log_index: int


def side_direction(side: Side | str) -> Direction:
    # maker-side convention: a buy maker pays collateral, a sell maker pays tokens
    if Side(side) is Side.BUY:
        return Direction.COLLATERAL_FOR_TOKEN
    return Direction.TOKEN_FOR_COLLATERAL


def derive_fill_price(maker_amount: int, taker_amount: int,
                      direction: Direction | str) -> float:
    """Collateral paid per outcome token, whichever side supplied the collateral.

    Values above 1 are returned unchanged; callers decide whether to flag them.
    """
    if maker_amount <= 0 or taker_amount <= 0:
        raise ZeroAmount(f"maker_amount={maker_amount}, taker_amount={taker_amount}")
    if Direction(direction) is Direction.COLLATERAL_FOR_TOKEN:
        collateral, tokens = maker_amount, taker_amount
    else:
        collateral, tokens = taker_amount, maker_amount
    return float(Fraction(collateral, tokens))


def settlement_is_standard(price: float) -> bool:
    return any(abs(price - s) < 1e-12 for s in STANDARD_SETTLEMENTS)


# -- validation -------------------------------------------------------------

def validate_market(record: MarketRecord) -> list[str]:
    report = []
    if not record.condition_id:
        report.append("MISSING_CONDITION_ID")
    elif not _HASH_RE.match(record.condition_id):
        report.append("MALFORMED_CONDITION_ID")
    if record.question_id is not None and not _HASH_RE.match(record.question_id):
        report.append("MALFORMED_QUESTION_ID")
    if not _ADDR_RE.match(record.oracle_address or ""):
        report.append("MALFORMED_ORACLE_ADDRESS")
    for tok in (record.yes_token, record.no_token):
        if tok and not _TOKEN_RE.match(tok):
            report.append("MALFORMED_TOKEN_ID")
            break
    if record.yes_token and record.no_token and record.yes_token == record.no_token:
        report.append("DUPLICATE_TOKENS")
    if record.clob_token_ids is not None:
        if any(t not in (record.yes_token, record.no_token) for t in record.clob_token_ids):
            report.append("CLOB_TOKEN_MISMATCH")
    if record.provenance is Provenance.API and not record.gamma_id:
        report.append("MISSING_GAMMA_ID")
    meta = record.metadata
    if meta.end_date is not None and utc(meta.created_at) > utc(meta.end_date):
        report.append("END_BEFORE_CREATED")
    if len(set(meta.tags)) != len(meta.tags):
        report.append("DUPLICATE_TAGS")
    return report


def validate_fill(fill: FillRecord) -> list[str]:
    report = []
    if not _HASH_RE.match(fill.tx_hash):
        report.append("MALFORMED_TX_HASH")
    if fill.log_index < 0 or fill.block_number < 0:
        report.append("NEGATIVE_POSITION")
    if fill.maker_amount <= 0 or fill.taker_amount <= 0:
        report.append("ZERO_AMOUNT")
        return report
    if fill.fee < 0:
        report.append("NEGATIVE_FEE")
    if not 0.0 <= fill.price <= 1.0:
        report.append("PRICE_OUT_OF_RANGE")
    if fill.size <= 0:
        report.append("NONPOSITIVE_SIZE")
    expected = derive_fill_price(fill.maker_amount, fill.taker_amount, fill.direction)
    if abs(expected - fill.price) > 1e-12:
        report.append("PRICE_MISMATCH")
    return report


def validate_oracle_event(event: OracleEvent) -> list[str]:
    report = []
    if not _HASH_RE.match(event.tx_hash):
        report.append("MALFORMED_TX_HASH")
    if event.event_type is OracleEventType.PROPOSE and event.proposed_price is None:
        report.append("MISSING_PROPOSED_PRICE")
    if event.event_type is OracleEventType.SETTLE and event.settled_price is None:
        report.append("MISSING_SETTLED_PRICE")
    if (event.settled_price is not None and not settlement_is_standard(event.settled_price)
            and not event.meta.get("nonstandard_settlement")):
        report.append("UNFLAGGED_NONSTANDARD_SETTLEMENT")
    return report


# -- canonical line records -------------------------------------------------

def _plain(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, datetime):
        return format_ts(value)
    if isinstance(value, bytes):
        return "0x" + value.hex()
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    return value


def to_record(obj) -> dict[str, Any]:
    return _plain(obj)


def _meta_from(raw) -> MarketMetadata:
    return MarketMetadata(
        slug=raw["slug"], title=raw["title"], description=raw["description"],
        created_at=parse_ts(raw["created_at"]), end_date=parse_ts(raw.get("end_date")),
        category=raw.get("category"), tags=tuple(raw.get("tags") or ()),
        event_slug=raw.get("event_slug"), series_slug=raw.get("series_slug"),
    )


def market_from_record(raw) -> MarketRecord:
    clob = raw.get("clob_token_ids")
    return MarketRecord(
        condition_id=raw["condition_id"], oracle_address=raw["oracle_address"],
        yes_token=raw["yes_token"], no_token=raw["no_token"],
        metadata=_meta_from(raw["metadata"]), gamma_id=raw.get("gamma_id"),
        question_id=raw.get("question_id"),
        clob_token_ids=tuple(clob) if clob is not None else None,
        provenance=Provenance(raw.get("provenance", "api")),
    )


def fill_from_record(raw) -> FillRecord:
    meta = raw["meta"]
    return FillRecord(
        tx_hash=raw["tx_hash"], log_index=int(raw["log_index"]),
        block_number=int(raw["block_number"]), maker=raw["maker"], taker=raw["taker"],
        asset_id=str(raw["asset_id"]), maker_amount=int(raw["maker_amount"]),
        taker_amount=int(raw["taker_amount"]), fee=int(raw["fee"]),
        size=float(raw["size"]), price=float(raw["price"]),
        meta=FillMeta(Exchange(meta["source_contract"]), Side(meta["side"]),
                      parse_ts(meta.get("timestamp"))),
        market_id=raw.get("market_id"),
    )


def oracle_from_record(raw) -> OracleEvent:
    anc = raw.get("ancillary")
    return OracleEvent(
        tx_hash=raw["tx_hash"], log_index=int(raw["log_index"]),
        block_number=int(raw["block_number"]), timestamp=parse_ts(raw["timestamp"]),
        event_type=OracleEventType(raw["event_type"]),
        source_contract=raw["source_contract"], requester=raw.get("requester"),
        question_id=raw.get("question_id"), condition_id=raw.get("condition_id"),
        market_id=raw.get("market_id"), actor=raw.get("actor"),
        ancillary=bytes.fromhex(anc[2:]) if anc else None,
        proposed_price=raw.get("proposed_price"), settled_price=raw.get("settled_price"),
        meta=dict(raw.get("meta") or {}),
    )


def registration_from_record(raw) -> TokenRegistration:
    return TokenRegistration(
        token0=str(raw["token0"]), token1=str(raw["token1"]),
        condition_id=raw["condition_id"], source_contract=Exchange(raw["source_contract"]),
        block_number=int(raw["block_number"]), tx_hash=raw["tx_hash"],
        log_index=int(raw["log_index"]),
    )


PARSERS = {
    MarketRecord: market_from_record,
    FillRecord: fill_from_record,
    OracleEvent: oracle_from_record,
    TokenRegistration: registration_from_record,
}


def from_record(cls, raw):
    return PARSERS[cls](raw)


def dumps(obj) -> str:
    """One canonical line (no trailing newline)."""
    rec = obj if isinstance(obj, dict) else to_record(obj)
    return json.dumps(rec, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_lines(path: str | Path, objs: Iterable) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in objs:
            fh.write(dumps(obj))
            fh.write("\n")
            n += 1
    return n


def read_lines(path: str | Path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if line:
                yield lineno, line
