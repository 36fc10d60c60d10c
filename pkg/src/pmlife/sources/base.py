"""Pull-based source interface over the market, fill, oracle and registration layers."""
from __future__ import annotations

import abc
import bisect
import enum
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Any

from ..errors import UnknownBlock
from ..model import FillRecord, MarketRecord, OracleEvent, TokenRegistration


class Layer(str, enum.Enum):
    MARKET = "market"
    FILL = "fill"
    ORACLE = "oracle"
    REGISTRATION = "registration"


@dataclass(frozen=True, order=True)
class SourceCursor:
    """Position within one layer.

    Chain layers use the last fully scanned block; the metadata and oracle
    streams use the count of records consumed so far.
    """
    layer: Layer
    position: int = 0

    def advanced(self, position: int) -> "SourceCursor":
        return SourceCursor(self.layer, max(self.position, position))


def origin(layer: Layer | str) -> SourceCursor:
    layer = Layer(layer)
    return SourceCursor(layer, -1 if layer in (Layer.FILL, Layer.REGISTRATION) else 0)


@dataclass(frozen=True)
class Quarantined:
    layer: str
    position: int
    reason: str


class Source(abc.ABC):
    """What the sync engine needs from an upstream."""

    def __init__(self):
        self.quarantine: list[Quarantined] = []

    def drain_quarantine(self) -> list[Quarantined]:
        out, self.quarantine = self.quarantine, []
        return out

    @abc.abstractmethod
    def head_block(self) -> int: ...

    @abc.abstractmethod
    def poll_markets(self, cursor: SourceCursor, until_block: int | None = None
                     ) -> tuple[list[MarketRecord], SourceCursor]: ...

    @abc.abstractmethod
    def poll_fills(self, from_block: int, to_block: int) -> list[FillRecord]: ...

    @abc.abstractmethod
    def poll_oracle_events(self, cursor: SourceCursor, until_block: int | None = None
                           ) -> tuple[list[OracleEvent], SourceCursor]: ...

    @abc.abstractmethod
    def scan_token_registrations(self, from_block: int, to_block: int) -> list[TokenRegistration]: ...

    @abc.abstractmethod
    def block_timestamp(self, block: int) -> datetime: ...


@dataclass
class Universe:
    """A complete, immutable event history that a UniverseSource replays."""
    start_time: datetime
    block_seconds: int
    head: int
    markets: list[tuple[int, MarketRecord]] = field(default_factory=list)
    fills: list[FillRecord] = field(default_factory=list)
    oracle_events: list[OracleEvent] = field(default_factory=list)
    registrations: list[TokenRegistration] = field(default_factory=list)
    truth: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.markets.sort(key=lambda m: (m[0], m[1].condition_id))
        self.fills.sort(key=lambda f: (f.block_number, f.log_index))
        self.oracle_events.sort(key=lambda e: (e.block_number, e.log_index))
        self.registrations.sort(key=lambda r: (r.block_number, r.log_index))
        self._market_blocks = [b for b, _ in self.markets]
        self._fill_blocks = [f.block_number for f in self.fills]
        self._oracle_blocks = [e.block_number for e in self.oracle_events]
        self._reg_blocks = [r.block_number for r in self.registrations]

    def timestamp(self, block: int) -> datetime:
        if block < 0 or block > self.head:
            raise UnknownBlock(block)
        return self.start_time + timedelta(seconds=block * self.block_seconds)

    def block_at(self, ts: datetime) -> int:
        return int((ts - self.start_time).total_seconds() // self.block_seconds)


def _range(blocks, items, lo, hi):
    i = bisect.bisect_left(blocks, lo)
    j = bisect.bisect_right(blocks, hi)
    return items[i:j]


class UniverseSource(Source):
    """Serves a Universe through the pull interface; used for simulator and fixture runs."""

    def __init__(self, universe: Universe):
        super().__init__()
        self.universe = universe
        self.timestamp_fetches = 0

    def head_block(self) -> int:
        return self.universe.head

    def poll_markets(self, cursor, until_block=None):
        assert Layer(cursor.layer) is Layer.MARKET
        u = self.universe
        limit = u.head if until_block is None else until_block
        end = bisect.bisect_right(u._market_blocks, limit)
        start = max(cursor.position, 0)
        if start >= end:
            return [], cursor
        return [m for _, m in u.markets[start:end]], cursor.advanced(end)

    def poll_fills(self, from_block, to_block):
        if from_block > to_block:
            raise ValueError("from_block > to_block")
        u = self.universe
        return _range(u._fill_blocks, u.fills, from_block, to_block)

    def poll_oracle_events(self, cursor, until_block=None):
        assert Layer(cursor.layer) is Layer.ORACLE
        u = self.universe
        limit = u.head if until_block is None else until_block
        end = bisect.bisect_right(u._oracle_blocks, limit)
        start = max(cursor.position, 0)
        if start >= end:
            return [], cursor
        return list(u.oracle_events[start:end]), cursor.advanced(end)

    def scan_token_registrations(self, from_block, to_block):
        if from_block > to_block:
            raise ValueError("from_block > to_block")
        u = self.universe
        return _range(u._reg_blocks, u.registrations, from_block, to_block)

    def block_timestamp(self, block):
        self.timestamp_fetches += 1
        return self.universe.timestamp(block)
