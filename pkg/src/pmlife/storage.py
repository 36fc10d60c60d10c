"""SQLite-backed canonical store D = (markets, fills, oracle events, bridge, cache, sync)."""
from __future__ import annotations

import json
import sqlite3
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DuplicateKey, StorageUnavailable
from .model import (BASE_UNIT, Exchange, FillMeta, FillRecord, MarketRecord, OracleEvent,
                    OracleEventType, Provenance, Side, TokenRegistration, dumps, format_ts,
                    market_from_record, oracle_from_record, parse_ts)
from .resolution import OracleBridge, TokenBridge, TokenSource

SCHEMA = """
CREATE TABLE IF NOT EXISTS markets (
  condition_id TEXT PRIMARY KEY,
  provenance TEXT NOT NULL,
  record TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS fills (
  tx_hash TEXT NOT NULL,
  log_index INTEGER NOT NULL,
  block_number INTEGER NOT NULL,
  maker TEXT NOT NULL,
  taker TEXT NOT NULL,
  asset_id TEXT NOT NULL,
  maker_amount INTEGER NOT NULL,
  taker_amount INTEGER NOT NULL,
  fee INTEGER NOT NULL,
  size REAL NOT NULL,
  price REAL NOT NULL,
  market_id TEXT,
  source_contract TEXT NOT NULL,
  side TEXT NOT NULL,
  timestamp TEXT,
  PRIMARY KEY (tx_hash, log_index)
);
CREATE INDEX IF NOT EXISTS idx_fills_block ON fills(block_number, log_index);
CREATE INDEX IF NOT EXISTS idx_fills_market ON fills(market_id);
CREATE INDEX IF NOT EXISTS idx_fills_asset ON fills(asset_id);
CREATE TABLE IF NOT EXISTS oracle_events (
  tx_hash TEXT NOT NULL,
  log_index INTEGER NOT NULL,
  block_number INTEGER NOT NULL,
  timestamp TEXT NOT NULL,
  event_type TEXT NOT NULL,
  market_id TEXT,
  link_path TEXT,
  record TEXT NOT NULL,
  PRIMARY KEY (tx_hash, log_index)
);
CREATE INDEX IF NOT EXISTS idx_oracle_market ON oracle_events(market_id);
CREATE TABLE IF NOT EXISTS token_bridge (
  asset_id TEXT PRIMARY KEY,
  condition_id TEXT NOT NULL,
  source TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS question_map (
  question_id TEXT PRIMARY KEY,
  condition_id TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS request_map (
  request_id TEXT PRIMARY KEY,
  question_id TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS registrations (
  tx_hash TEXT NOT NULL,
  log_index INTEGER NOT NULL,
  block_number INTEGER NOT NULL,
  token0 TEXT NOT NULL,
  token1 TEXT NOT NULL,
  condition_id TEXT NOT NULL,
  source_contract TEXT NOT NULL,
  PRIMARY KEY (tx_hash, log_index)
);
CREATE INDEX IF NOT EXISTS idx_reg_token0 ON registrations(token0);
CREATE INDEX IF NOT EXISTS idx_reg_token1 ON registrations(token1);
CREATE TABLE IF NOT EXISTS bridge_conflicts (
  asset_id TEXT NOT NULL,
  kept TEXT NOT NULL,
  rejected TEXT NOT NULL,
  PRIMARY KEY (asset_id, rejected)
);
CREATE TABLE IF NOT EXISTS block_timestamps (
  block_number INTEGER PRIMARY KEY,
  timestamp TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS sync_state (
  key TEXT PRIMARY KEY,
  value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS retry_queue (
  asset_id TEXT PRIMARY KEY,
  first_seen_block INTEGER NOT NULL,
  attempts INTEGER NOT NULL,
  pending_fills INTEGER NOT NULL,
  exhausted INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS quarantine (
  layer TEXT NOT NULL,
  position TEXT NOT NULL,
  reason TEXT NOT NULL,
  PRIMARY KEY (layer, position)
);
CREATE TABLE IF NOT EXISTS market_day (
  market_id TEXT NOT NULL,
  day TEXT NOT NULL,
  trade_count INTEGER NOT NULL,
  total_trade_value INTEGER NOT NULL,
  total_fee INTEGER NOT NULL,
  distinct_wallets INTEGER NOT NULL,
  last_price_yes REAL,
  PRIMARY KEY (market_id, day)
);
"""

# relation name -> ordering used for exports
RELATIONS = {
    "markets": "condition_id",
    "fills": "block_number, log_index, tx_hash",
    "oracle_events": "block_number, log_index, tx_hash",
    "token_bridge": "asset_id",
    "question_map": "question_id",
    "request_map": "request_id",
    "registrations": "block_number, log_index, tx_hash",
    "bridge_conflicts": "asset_id, rejected",
    "block_timestamps": "block_number",
    "sync_state": "key",
    "retry_queue": "asset_id",
    "quarantine": "layer, position",
    "market_day": "market_id, day",
}
SYNC_RELATIONS = ("sync_state",)


@dataclass(frozen=True)
class MarketDaySummary:
    """Per-market per-day aggregate; value and fee are in collateral base units."""
    market_id: str
    day: date
    trade_count: int
    total_trade_value: int
    total_fee: int
    distinct_wallets: int
    last_price_yes: float | None = None

    @property
    def trade_value(self) -> float:
        return self.total_trade_value / BASE_UNIT

    @property
    def fee_value(self) -> float:
        return self.total_fee / BASE_UNIT


def _rate(num, den):
    return num / den if den else None


@dataclass
class QualityReport:
    total_markets: int = 0
    traded_markets: int = 0
    oracle_linked_markets: int = 0
    total_fills: int = 0
    total_oracle_events: int = 0
    linked_oracle_events: int = 0
    event_type_counts: dict[str, tuple[int, int]] = field(default_factory=dict)
    active_addresses: int = 0
    market_day_rows: int = 0
    broken_reference_count: int = 0
    traded_assets: int = 0
    resolved_assets: int = 0
    unlinked_fills: int = 0
    retry_pending: int = 0
    retry_exhausted: int = 0
    quarantined: int = 0
    bridge_conflicts: int = 0

    @property
    def traded_rate(self):
        return _rate(self.traded_markets, self.total_markets)

    @property
    def oracle_linked_rate(self):
        return _rate(self.oracle_linked_markets, self.total_markets)

    @property
    def linked_oracle_rate(self):
        return _rate(self.linked_oracle_events, self.total_oracle_events)

    @property
    def token_resolution_rate(self):
        return _rate(self.resolved_assets, self.traded_assets)

    def event_type_rate(self, event_type: str):
        linked, total = self.event_type_counts.get(event_type, (0, 0))
        return _rate(linked, total)

    def rows(self) -> list[tuple[str, int, float | None]]:
        """(metric, value, rate) rows; the first eight follow the published quality table."""
        out = [
            ("Total canonical markets", self.total_markets, None),
            ("Traded markets", self.traded_markets, self.traded_rate),
            ("Oracle-linked markets", self.oracle_linked_markets, self.oracle_linked_rate),
            ("Total fill-level trades", self.total_fills, None),
            ("Total oracle events", self.total_oracle_events, None),
            ("Linked oracle events", self.linked_oracle_events, self.linked_oracle_rate),
            ("Active addresses", self.active_addresses, None),
            ("Materialized market-day observations", self.market_day_rows, None),
        ]
        for etype in ("request", "propose", "dispute", "settle"):
            linked, _ = self.event_type_counts.get(etype, (0, 0))
            out.append((f"Linked {etype} events", linked, self.event_type_rate(etype)))
        out += [
            ("Broken references", self.broken_reference_count, None),
            ("Resolved traded tokens", self.resolved_assets, self.token_resolution_rate),
            ("Unlinked fills", self.unlinked_fills, None),
            ("Retry queue pending", self.retry_pending, None),
            ("Retry queue exhausted", self.retry_exhausted, None),
            ("Quarantined records", self.quarantined, None),
            ("Bridge conflicts", self.bridge_conflicts, None),
        ]
        return out

    def to_dict(self):
        d = asdict(self)
        d["event_type_counts"] = {k: list(v) for k, v in sorted(self.event_type_counts.items())}
        d["rates"] = {name: rate for name, _, rate in self.rows()}
        return d

    def render(self) -> str:
        """Tab-separated document: Metric, Value, Rate ('-' when undefined)."""
        lines = ["Metric\tValue\tRate"]
        for name, value, rate in self.rows():
            lines.append(f"{name}\t{value}\t{'-' if rate is None else f'{100 * rate:.2f}%'}")
        return "\n".join(lines) + "\n"


class Store:
    def __init__(self, path: str | Path = ":memory:"):
        self.path = str(path)
        try:
            self.conn = sqlite3.connect(self.path, isolation_level=None, check_same_thread=False)
            self.conn.row_factory = sqlite3.Row
            self.conn.executescript(SCHEMA)
        except sqlite3.Error as exc:
            raise StorageUnavailable(f"cannot open store at {self.path}: {exc}") from exc
        self._depth = 0

    def close(self):
        self.conn.close()

    @contextmanager
    def transaction(self) -> Iterator[sqlite3.Connection]:
        """Atomic batch: everything inside commits together or not at all."""
        if self._depth:
            self._depth += 1
            try:
                yield self.conn
            finally:
                self._depth -= 1
            return
        try:
            self.conn.execute("BEGIN IMMEDIATE")
        except sqlite3.Error as exc:
            raise StorageUnavailable(str(exc)) from exc
        self._depth = 1
        try:
            yield self.conn
        except BaseException:
            self._depth = 0
            self.conn.execute("ROLLBACK")
            raise
        self._depth = 0
        try:
            self.conn.execute("COMMIT")
        except sqlite3.Error as exc:
            self.conn.execute("ROLLBACK")
            raise StorageUnavailable(str(exc)) from exc

    def _q(self, sql, params=()):
        try:
            return self.conn.execute(sql, params)
        except sqlite3.OperationalError as exc:
            raise StorageUnavailable(str(exc)) from exc

    # -- markets ------------------------------------------------------------

    def upsert_market(self, record: MarketRecord) -> bool:
        """Insert or update a market. A recovered record never replaces an API record."""
        row = self._q("SELECT provenance, record FROM markets WHERE condition_id = ?",
                      (record.condition_id,)).fetchone()
        text = dumps(record)
        if row is not None:
            if (row["provenance"] == Provenance.API.value
                    and record.provenance is Provenance.ONCHAIN_RECOVERED):
                return False
            if row["record"] == text:
                return False
        self._q("INSERT INTO markets(condition_id, provenance, record) VALUES (?, ?, ?) "
                "ON CONFLICT(condition_id) DO UPDATE SET provenance = excluded.provenance, "
                "record = excluded.record",
                (record.condition_id, record.provenance.value, text))
        return True

    def get_market(self, condition_id: str) -> MarketRecord | None:
        row = self._q("SELECT record FROM markets WHERE condition_id = ?", (condition_id,)).fetchone()
        return market_from_record(json.loads(row["record"])) if row else None

    def markets(self) -> list[MarketRecord]:
        rows = self._q("SELECT record FROM markets ORDER BY condition_id").fetchall()
        return [market_from_record(json.loads(r["record"])) for r in rows]

    def market_ids(self) -> set[str]:
        return {r[0] for r in self._q("SELECT condition_id FROM markets")}

    # -- fills --------------------------------------------------------------

    _FILL_COLS = ("tx_hash, log_index, block_number, maker, taker, asset_id, maker_amount, "
                  "taker_amount, fee, size, price, market_id, source_contract, side, timestamp")

    @staticmethod
    def _fill_params(f: FillRecord):
        return (f.tx_hash, f.log_index, f.block_number, f.maker, f.taker, f.asset_id,
                f.maker_amount, f.taker_amount, f.fee, f.size, f.price, f.market_id,
                f.meta.source_contract.value, f.meta.side.value, format_ts(f.meta.timestamp))

    def insert_fill(self, fill: FillRecord) -> None:
        try:
            self.conn.execute(f"INSERT INTO fills({self._FILL_COLS}) VALUES "
                              f"(?,?,?,?,?,?,?,?,?,?,?,?,?,?,?)", self._fill_params(fill))
        except sqlite3.IntegrityError as exc:
            raise DuplicateKey(fill.key) from exc
        except sqlite3.OperationalError as exc:
            raise StorageUnavailable(str(exc)) from exc

    def has_fill(self, key) -> bool:
        return self._q("SELECT 1 FROM fills WHERE tx_hash = ? AND log_index = ?", key).fetchone() is not None

    @staticmethod
    def _fill_from_row(r) -> FillRecord:
        return FillRecord(
            tx_hash=r["tx_hash"], log_index=r["log_index"], block_number=r["block_number"],
            maker=r["maker"], taker=r["taker"], asset_id=r["asset_id"],
            maker_amount=r["maker_amount"], taker_amount=r["taker_amount"], fee=r["fee"],
            size=r["size"], price=r["price"],
            meta=FillMeta(Exchange(r["source_contract"]), Side(r["side"]), parse_ts(r["timestamp"])),
            market_id=r["market_id"],
        )

    def get_fill(self, tx_hash: str, log_index: int) -> FillRecord | None:
        r = self._q("SELECT * FROM fills WHERE tx_hash = ? AND log_index = ?",
                    (tx_hash, log_index)).fetchone()
        return self._fill_from_row(r) if r else None

    def fills(self, where: str = "", params=()) -> list[FillRecord]:
        sql = "SELECT * FROM fills " + (f"WHERE {where} " if where else "")
        sql += "ORDER BY block_number, log_index"
        return [self._fill_from_row(r) for r in self._q(sql, params)]

    def fills_in_blocks(self, lo: int, hi: int) -> list[FillRecord]:
        return self.fills("block_number BETWEEN ? AND ?", (lo, hi))

    def fills_for_market(self, market_id: str) -> list[FillRecord]:
        return self.fills("market_id = ?", (market_id,))

    def fills_in_days(self, start: date, end: date) -> list[FillRecord]:
        lo = f"{start.isoformat()}T00:00:00Z"
        hi = f"{end.isoformat()}T23:59:59Z"
        return self.fills("timestamp BETWEEN ? AND ?", (lo, hi))

    def link_fills(self, asset_id: str, market_id: str) -> int:
        cur = self._q("UPDATE fills SET market_id = ? WHERE asset_id = ? AND market_id IS NULL",
                      (market_id, asset_id))
        return cur.rowcount

    # -- oracle -------------------------------------------------------------

    def insert_oracle_event(self, event: OracleEvent, link_path: str | None = None) -> None:
        try:
            self.conn.execute(
                "INSERT INTO oracle_events(tx_hash, log_index, block_number, timestamp, event_type, "
                "market_id, link_path, record) VALUES (?,?,?,?,?,?,?,?)",
                (event.tx_hash, event.log_index, event.block_number, format_ts(event.timestamp),
                 event.event_type.value, event.market_id, link_path, dumps(event)))
        except sqlite3.IntegrityError as exc:
            raise DuplicateKey(event.key) from exc
        except sqlite3.OperationalError as exc:
            raise StorageUnavailable(str(exc)) from exc

    def has_oracle_event(self, key) -> bool:
        return self._q("SELECT 1 FROM oracle_events WHERE tx_hash = ? AND log_index = ?",
                       key).fetchone() is not None

    def oracle_events(self, where: str = "", params=()) -> list[OracleEvent]:
        sql = "SELECT record FROM oracle_events " + (f"WHERE {where} " if where else "")
        sql += "ORDER BY block_number, log_index"
        return [oracle_from_record(json.loads(r["record"])) for r in self._q(sql, params)]

    def get_oracle_event(self, tx_hash, log_index) -> OracleEvent | None:
        found = self.oracle_events("tx_hash = ? AND log_index = ?", (tx_hash, log_index))
        return found[0] if found else None

    def unlinked_oracle_events(self) -> list[OracleEvent]:
        return self.oracle_events("market_id IS NULL")

    def link_oracle_event(self, event: OracleEvent, market_id: str, link_path: str) -> None:
        linked = OracleEvent(**{**event.__dict__, "market_id": market_id})
        self._q("UPDATE oracle_events SET market_id = ?, link_path = ?, record = ? "
                "WHERE tx_hash = ? AND log_index = ?",
                (market_id, link_path, dumps(linked), event.tx_hash, event.log_index))

    def oracle_link_outcomes(self) -> list[tuple[str, str | None]]:
        return [(r[0], r[1]) for r in self._q(
            "SELECT event_type, link_path FROM oracle_events ORDER BY block_number, log_index")]

    # -- bridge -------------------------------------------------------------

    def save_token_mapping(self, asset_id, condition_id, source: TokenSource) -> None:
        self._q("INSERT INTO token_bridge(asset_id, condition_id, source) VALUES (?,?,?) "
                "ON CONFLICT(asset_id) DO UPDATE SET condition_id = excluded.condition_id, "
                "source = excluded.source", (asset_id, condition_id, TokenSource(source).value))

    def load_token_bridge(self) -> TokenBridge:
        bridge = TokenBridge()
        for r in self._q("SELECT asset_id, condition_id, source FROM token_bridge"):
            bridge.entries[r[0]] = (r[1], TokenSource(r[2]))
        return bridge

    def save_oracle_mapping(self, kind: str, key: str, value: str) -> None:
        if kind == "question":
            self._q("INSERT OR IGNORE INTO question_map(question_id, condition_id) VALUES (?,?)",
                    (key, value))
        else:
            self._q("INSERT OR IGNORE INTO request_map(request_id, question_id) VALUES (?,?)",
                    (key, value))

    def load_oracle_bridge(self) -> OracleBridge:
        bridge = OracleBridge()
        bridge.question_to_condition.update(self._q("SELECT question_id, condition_id FROM question_map"))
        bridge.request_to_question.update(self._q("SELECT request_id, question_id FROM request_map"))
        for cid in self.market_ids():
            bridge.add_market(cid)
        return bridge

    def record_conflicts(self, conflicts) -> None:
        for asset, kept, rejected in conflicts:
            self._q("INSERT OR IGNORE INTO bridge_conflicts(asset_id, kept, rejected) VALUES (?,?,?)",
                    (asset, kept, rejected))

    def insert_registration(self, reg: TokenRegistration) -> bool:
        cur = self._q(
            "INSERT OR IGNORE INTO registrations(tx_hash, log_index, block_number, token0, token1, "
            "condition_id, source_contract) VALUES (?,?,?,?,?,?,?)",
            (reg.tx_hash, reg.log_index, reg.block_number, reg.token0, reg.token1,
             reg.condition_id, reg.source_contract.value))
        return cur.rowcount == 1

    def registration_for_token(self, asset_id: str) -> TokenRegistration | None:
        r = self._q("SELECT * FROM registrations WHERE token0 = ? OR token1 = ? "
                    "ORDER BY block_number, log_index LIMIT 1", (asset_id, asset_id)).fetchone()
        if r is None:
            return None
        return TokenRegistration(token0=r["token0"], token1=r["token1"],
                                 condition_id=r["condition_id"],
                                 source_contract=Exchange(r["source_contract"]),
                                 block_number=r["block_number"], tx_hash=r["tx_hash"],
                                 log_index=r["log_index"])

    # -- cache --------------------------------------------------------------

    def cached_timestamps(self, blocks: Iterable[int]) -> dict[int, datetime]:
        blocks = list(blocks)
        out = {}
        for i in range(0, len(blocks), 500):
            chunk = blocks[i:i + 500]
            marks = ",".join("?" * len(chunk))
            for r in self._q(f"SELECT block_number, timestamp FROM block_timestamps "
                             f"WHERE block_number IN ({marks})", chunk):
                out[r[0]] = parse_ts(r[1])
        return out

    def cache_timestamp(self, block: int, ts: datetime) -> None:
        # cached values are immutable once written
        self._q("INSERT OR IGNORE INTO block_timestamps(block_number, timestamp) VALUES (?,?)",
                (block, format_ts(ts)))

    # -- sync metadata ------------------------------------------------------

    def load_sync(self) -> dict:
        return {r[0]: json.loads(r[1]) for r in self._q("SELECT key, value FROM sync_state")}

    def save_sync(self, values: dict) -> None:
        for k, v in values.items():
            self._q("INSERT INTO sync_state(key, value) VALUES (?, ?) "
                    "ON CONFLICT(key) DO UPDATE SET value = excluded.value",
                    (k, json.dumps(v, sort_keys=True)))

    # -- retry queue --------------------------------------------------------

    def enqueue_retry(self, asset_id: str, block: int, n_fills: int) -> None:
        self._q("INSERT INTO retry_queue(asset_id, first_seen_block, attempts, pending_fills) "
                "VALUES (?, ?, 0, ?) ON CONFLICT(asset_id) DO UPDATE SET "
                "pending_fills = pending_fills + excluded.pending_fills, "
                "first_seen_block = MIN(first_seen_block, excluded.first_seen_block)",
                (asset_id, block, n_fills))

    def retry_entries(self, include_exhausted=False) -> list[sqlite3.Row]:
        sql = "SELECT * FROM retry_queue"
        if not include_exhausted:
            sql += " WHERE exhausted = 0"
        return self._q(sql + " ORDER BY first_seen_block, asset_id").fetchall()

    def retry_attempted(self, asset_id: str, exhausted: bool) -> None:
        self._q("UPDATE retry_queue SET attempts = attempts + 1, exhausted = ? WHERE asset_id = ?",
                (int(exhausted), asset_id))

    def retry_resolved(self, asset_id: str) -> None:
        self._q("DELETE FROM retry_queue WHERE asset_id = ?", (asset_id,))

    # -- quarantine ---------------------------------------------------------

    def quarantine(self, layer: str, position, reason: str) -> bool:
        cur = self._q("INSERT OR IGNORE INTO quarantine(layer, position, reason) VALUES (?,?,?)",
                      (layer, str(position), reason))
        return cur.rowcount == 1

    def quarantined(self) -> list[tuple[str, str, str]]:
        return [tuple(r) for r in self._q("SELECT layer, position, reason FROM quarantine "
                                          "ORDER BY layer, position")]

    # -- summaries ----------------------------------------------------------

    def materialize_summaries(self, start: date | None = None, end: date | None = None) -> int:
        """Recompute market-day rows over [start, end] (whole history when omitted)."""
        if start is None or end is None:
            lo, hi = self._q("SELECT MIN(timestamp), MAX(timestamp) FROM fills "
                             "WHERE market_id IS NOT NULL").fetchone()
            if lo is None:
                with self.transaction():
                    self._q("DELETE FROM market_day")
                return 0
            start = start or parse_ts(lo).date()
            end = end or parse_ts(hi).date()
        fills = [f for f in self.fills_in_days(start, end) if f.market_id is not None]
        yes_tokens = {}
        rows = summarize_fills(fills, yes_tokens_for=lambda mid: yes_tokens.setdefault(
            mid, self._yes_token(mid)))
        with self.transaction():
            self._q("DELETE FROM market_day WHERE day BETWEEN ? AND ?",
                    (start.isoformat(), end.isoformat()))
            for s in rows:
                self._q("INSERT INTO market_day(market_id, day, trade_count, total_trade_value, "
                        "total_fee, distinct_wallets, last_price_yes) VALUES (?,?,?,?,?,?,?)",
                        (s.market_id, s.day.isoformat(), s.trade_count, s.total_trade_value,
                         s.total_fee, s.distinct_wallets, s.last_price_yes))
        return len(rows)

    def _yes_token(self, market_id):
        m = self.get_market(market_id)
        return m.tokens()[0] if m and m.tokens() else None

    def insert_summary(self, s: MarketDaySummary) -> None:
        self._q("INSERT OR REPLACE INTO market_day(market_id, day, trade_count, total_trade_value, "
                "total_fee, distinct_wallets, last_price_yes) VALUES (?,?,?,?,?,?,?)",
                (s.market_id, s.day.isoformat(), s.trade_count, s.total_trade_value,
                 s.total_fee, s.distinct_wallets, s.last_price_yes))

    def summaries(self, market_id: str | None = None, start: date | None = None,
                  end: date | None = None) -> list[MarketDaySummary]:
        clauses, params = [], []
        if market_id is not None:
            clauses.append("market_id = ?")
            params.append(market_id)
        if start is not None:
            clauses.append("day >= ?")
            params.append(start.isoformat())
        if end is not None:
            clauses.append("day <= ?")
            params.append(end.isoformat())
        sql = "SELECT * FROM market_day"
        if clauses:
            sql += " WHERE " + " AND ".join(clauses)
        sql += " ORDER BY market_id, day"
        return [MarketDaySummary(r["market_id"], date.fromisoformat(r["day"]), r["trade_count"],
                                 r["total_trade_value"], r["total_fee"], r["distinct_wallets"],
                                 r["last_price_yes"]) for r in self._q(sql, params)]

    # -- quality ------------------------------------------------------------

    def compute_quality(self) -> QualityReport:
        q = self._q
        rep = QualityReport()
        market_ids = self.market_ids()
        rep.total_markets = len(market_ids)
        rep.traded_markets = q("SELECT COUNT(DISTINCT market_id) FROM fills f WHERE market_id IS NOT NULL "
                               "AND EXISTS (SELECT 1 FROM markets m WHERE m.condition_id = f.market_id)"
                               ).fetchone()[0]
        rep.oracle_linked_markets = q(
            "SELECT COUNT(DISTINCT market_id) FROM oracle_events o WHERE market_id IS NOT NULL "
            "AND EXISTS (SELECT 1 FROM markets m WHERE m.condition_id = o.market_id)").fetchone()[0]
        rep.total_fills = q("SELECT COUNT(*) FROM fills").fetchone()[0]
        rep.unlinked_fills = q("SELECT COUNT(*) FROM fills WHERE market_id IS NULL").fetchone()[0]
        rep.total_oracle_events = q("SELECT COUNT(*) FROM oracle_events").fetchone()[0]
        rep.linked_oracle_events = q("SELECT COUNT(*) FROM oracle_events WHERE market_id IS NOT NULL"
                                     ).fetchone()[0]
        for r in q("SELECT event_type, COUNT(market_id), COUNT(*) FROM oracle_events GROUP BY event_type"):
            rep.event_type_counts[r[0]] = (r[1], r[2])
        for etype in OracleEventType:
            rep.event_type_counts.setdefault(etype.value, (0, 0))
        rep.active_addresses = q("SELECT COUNT(*) FROM (SELECT maker AS a FROM fills UNION "
                                 "SELECT taker FROM fills)").fetchone()[0]
        rep.market_day_rows = q("SELECT COUNT(*) FROM market_day").fetchone()[0]
        rep.broken_reference_count = (
            q("SELECT COUNT(*) FROM market_day s WHERE NOT EXISTS "
              "(SELECT 1 FROM markets m WHERE m.condition_id = s.market_id)").fetchone()[0]
            + q("SELECT COUNT(*) FROM oracle_events o WHERE market_id IS NOT NULL AND NOT EXISTS "
                "(SELECT 1 FROM markets m WHERE m.condition_id = o.market_id)").fetchone()[0])
        rep.traded_assets = q("SELECT COUNT(DISTINCT asset_id) FROM fills").fetchone()[0]
        rep.resolved_assets = q("SELECT COUNT(DISTINCT asset_id) FROM fills WHERE market_id IS NOT NULL"
                                ).fetchone()[0]
        rep.retry_pending = q("SELECT COUNT(*) FROM retry_queue WHERE exhausted = 0").fetchone()[0]
        rep.retry_exhausted = q("SELECT COUNT(*) FROM retry_queue WHERE exhausted = 1").fetchone()[0]
        rep.quarantined = q("SELECT COUNT(*) FROM quarantine").fetchone()[0]
        rep.bridge_conflicts = q("SELECT COUNT(*) FROM bridge_conflicts").fetchone()[0]
        return rep

    # -- export / import ----------------------------------------------------

    def dump(self, exclude: Iterable[str] = ()) -> dict[str, list[str]]:
        """Every relation as ordered canonical lines; the basis for byte-level comparisons."""
        out = {}
        skip = set(exclude)
        for name, order in RELATIONS.items():
            if name in skip:
                continue
            cur = self._q(f"SELECT * FROM {name} ORDER BY {order}")
            cols = [c[0] for c in cur.description]
            out[name] = [dumps(dict(zip(cols, row))) for row in cur]
        return out

    def export(self, directory) -> dict[str, int]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        counts = {}
        for name, lines in self.dump().items():
            with open(out / f"{name}.jsonl", "w", encoding="utf-8", newline="\n") as fh:
                for line in lines:
                    fh.write(line + "\n")
            counts[name] = len(lines)
        return counts

    def import_(self, directory) -> dict[str, int]:
        src = Path(directory)
        counts = {}
        with self.transaction():
            for name in RELATIONS:
                path = src / f"{name}.jsonl"
                if not path.exists():
                    continue
                n = 0
                with open(path, encoding="utf-8") as fh:
                    for line in fh:
                        if not line.strip():
                            continue
                        row = json.loads(line)
                        cols = list(row)
                        self._q(f"INSERT OR REPLACE INTO {name}({', '.join(cols)}) VALUES "
                                f"({', '.join('?' * len(cols))})", [row[c] for c in cols])
                        n += 1
                counts[name] = n
        return counts


def summarize_fills(fills: Iterable[FillRecord], yes_tokens_for) -> list[MarketDaySummary]:
    """Aggregate linked, timestamped fills into market-day rows.

    `yes_tokens_for(market_id)` returns the YES token so NO-side prices map to 1 - p.
    """
    groups: dict[tuple[str, date], list[FillRecord]] = defaultdict(list)
    for f in fills:
        if f.market_id is None or f.meta.timestamp is None:
            continue
        groups[(f.market_id, f.meta.timestamp.date())].append(f)
    rows = []
    for (mid, day), group in sorted(groups.items()):
        group.sort(key=lambda f: (f.block_number, f.log_index))
        wallets = {f.maker for f in group} | {f.taker for f in group}
        last = group[-1]
        yes = yes_tokens_for(mid)
        if yes is None:
            last_yes = None
        else:
            last_yes = last.price if last.asset_id == yes else 1.0 - last.price
        rows.append(MarketDaySummary(
            market_id=mid, day=day, trade_count=len(group),
            total_trade_value=sum(f.collateral_amount for f in group),
            total_fee=sum(f.fee for f in group), distinct_wallets=len(wallets),
            last_price_yes=last_yes,
        ))
    return rows
