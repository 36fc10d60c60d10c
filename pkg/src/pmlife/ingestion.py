"""Checkpointed, duplicate-safe synchronization of the market, fill and oracle layers."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from typing import Callable, Iterable

from .errors import ConflictingMapping, NotFound
from .model import (Exchange, FillMeta, FillRecord, MarketMetadata, MarketRecord, OracleEvent,
                    Provenance, format_ts, parse_ts, validate_fill, validate_market,
                    validate_oracle_event)
from .resolution import ALL_PATHS, LinkPath, TokenSource
from .sources.base import Layer, Source, SourceCursor, origin
from .sources.simulator import ADAPTER_FOR
from .storage import Store

log = logging.getLogger(__name__)

CYCLE_LAYERS = (Layer.MARKET, Layer.FILL, Layer.ORACLE)
DEFAULT_MAX_ATTEMPTS = 10
DEFAULT_BLOCKS_PER_CYCLE = 50_000


@dataclass(frozen=True)
class Toggles:
    """Feature switches matching the ablation mechanisms; all on by default."""
    onchain_recovery: bool = True
    bridge_paths: frozenset = ALL_PATHS
    retry: bool = True
    timestamp_cache: bool = True

    def with_paths(self, paths: Iterable[LinkPath | str]) -> "Toggles":
        return replace(self, bridge_paths=frozenset(LinkPath(p) for p in paths))


@dataclass
class SyncState:
    cursors: dict[Layer, SourceCursor] = field(
        default_factory=lambda: {layer: origin(layer) for layer in Layer})
    last_cycle_at: datetime | None = None
    cycle_count: int = 0
    # target block of the last completed cycle
    target_block: int = -1
    # layer -> number of the cycle whose batch for that layer committed last
    layer_done: dict[str, int] = field(default_factory=dict)

    def cursor(self, layer) -> SourceCursor:
        return self.cursors[Layer(layer)]

    def to_dict(self) -> dict:
        return {
            "cursors": {l.value: c.position for l, c in sorted(self.cursors.items())},
            "last_cycle_at": format_ts(self.last_cycle_at),
            "cycle_count": self.cycle_count,
            "target_block": self.target_block,
            "layer_done": dict(sorted(self.layer_done.items())),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SyncState":
        state = cls()
        for name, pos in (raw.get("cursors") or {}).items():
            state.cursors[Layer(name)] = SourceCursor(Layer(name), int(pos))
        state.last_cycle_at = parse_ts(raw.get("last_cycle_at"))
        state.cycle_count = int(raw.get("cycle_count", 0))
        state.target_block = int(raw.get("target_block", -1))
        state.layer_done = dict(raw.get("layer_done") or {})
        return state

    def copy(self) -> "SyncState":
        return SyncState.from_dict(self.to_dict())


@dataclass
class IngestResult:
    inserted: int = 0
    duplicate: int = 0
    quarantined: int = 0
    unresolved: int = 0
    linked: int = 0
    unlinked: int = 0

    @property
    def total(self) -> int:
        return self.inserted + self.duplicate + self.quarantined


@dataclass
class LayerCounts:
    ingested: int = 0
    deduped: int = 0
    quarantined: int = 0
    detail: dict[str, int] = field(default_factory=dict)


@dataclass
class CycleReport:
    cycle: int
    target_block: int
    layers: dict[str, LayerCounts] = field(default_factory=dict)

    def counts(self, layer) -> LayerCounts:
        return self.layers.setdefault(Layer(layer).value, LayerCounts())

    @property
    def is_empty(self) -> bool:
        return all(c.ingested == c.deduped == c.quarantined == 0 for c in self.layers.values())

    def to_record(self) -> dict:
        return {"cycle": self.cycle, "target_block": self.target_block,
                "layers": {k: asdict(v) for k, v in sorted(self.layers.items())}}


@dataclass
class TimestampCache:
    hits: int = 0
    misses: int = 0
    fetches: int = 0


class SyncEngine:
    """Runs sync cycles of a Source into a Store.

    `after_commit`, when given, is called with the layer name after each layer's
    batch commits; tests use it to inject crashes at commit boundaries.
    """

    def __init__(self, store: Store, source: Source, toggles: Toggles = Toggles(),
                 max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                 blocks_per_cycle: int = DEFAULT_BLOCKS_PER_CYCLE,
                 confirmation_depth: int = 0,
                 recovery_oracles: dict | None = None,
                 after_commit: Callable[[str], None] | None = None):
        self.store = store
        self.source = source
        self.toggles = toggles
        self.max_attempts = max_attempts
        self.blocks_per_cycle = blocks_per_cycle
        self.confirmation_depth = confirmation_depth
        self.recovery_oracles = {Exchange(k): v for k, v in (recovery_oracles or ADAPTER_FOR).items()}
        self.after_commit = after_commit
        self.cache = TimestampCache()
        self._reload()

    def _reload(self):
        self.token_bridge = self.store.load_token_bridge()
        self.oracle_bridge = self.store.load_oracle_bridge()
        self.state = SyncState.from_dict(self.store.load_sync())

    def _committed(self, layer):
        if self.after_commit is not None:
            self.after_commit(Layer(layer).value)

    # -- cycle --------------------------------------------------------------

    def run_cycle(self) -> tuple[SyncState, CycleReport]:
        state = self.state
        cycle = state.cycle_count + 1
        safe_head = self.source.head_block() - self.confirmation_depth
        target = max(state.target_block, min(safe_head, state.target_block + self.blocks_per_cycle))
        report = CycleReport(cycle, target)
        try:
            for layer in CYCLE_LAYERS:
                if state.layer_done.get(layer.value) == cycle:
                    continue  # committed before an interruption
                with self.store.transaction():
                    if layer is Layer.MARKET:
                        self._market_step(target, report)
                    elif layer is Layer.FILL:
                        fill_cursor = state.cursor(Layer.FILL).position
                        if target > fill_cursor:
                            self._fill_step(fill_cursor + 1, target, report)
                        self._retry_step(report)
                    else:
                        self._oracle_step(target, report)
                    state.layer_done[layer.value] = cycle
                    self.store.save_sync(state.to_dict())
                self._committed(layer)
            with self.store.transaction():
                state.cycle_count = cycle
                state.target_block = target
                if target >= 0:
                    state.last_cycle_at = self.source.block_timestamp(target)
                self.store.save_sync(state.to_dict())
        except BaseException:
            self._reload()
            raise
        log.info("cycle %d target=%d %s", cycle, target, report.to_record()["layers"])
        return state, report

    def run(self, cycles: int | None = None) -> list[CycleReport]:
        """Run `cycles` cycles, or until the source head is reached when None."""
        reports = []
        while cycles is None or len(reports) < cycles:
            before = self.state.target_block
            _, rep = self.run_cycle()
            reports.append(rep)
            if cycles is None and rep.target_block == before:
                break
        return reports

    def backfill(self, from_block: int, to_block: int, window: int | None = None,
                 step: int | None = None) -> list[CycleReport]:
        """Ingest fills over explicit block windows, replaying overlaps safely.

        Market, registration and oracle streams follow their cursors up to each
        window's end; fill windows are scanned regardless of the fill cursor.
        """
        window = window or (to_block - from_block + 1)
        step = step or window
        reports = []
        lo = from_block
        while lo <= to_block:
            hi = min(to_block, lo + window - 1)
            rep = CycleReport(self.state.cycle_count, hi)
            try:
                with self.store.transaction():
                    self._market_step(hi, rep)
                    self._fill_step(lo, hi, rep)
                    self._retry_step(rep)
                    self._oracle_step(hi, rep)
                    self.store.save_sync(self.state.to_dict())
            except BaseException:
                self._reload()
                raise
            reports.append(rep)
            if hi == to_block:
                break
            lo += step
        return reports

    # -- layer steps --------------------------------------------------------

    def _market_step(self, until: int, report: CycleReport):
        counts = report.counts(Layer.MARKET)
        cursor = self.state.cursor(Layer.MARKET)
        batch, nxt = self.source.poll_markets(cursor, until)
        for m in batch:
            problems = validate_market(m)
            if problems:
                self.store.quarantine(Layer.MARKET.value, m.condition_id or f"pos:{nxt.position}",
                                      ",".join(problems))
                counts.quarantined += 1
                continue
            if self._merge_market(m):
                counts.ingested += 1
            else:
                counts.deduped += 1
        self._drain_source_quarantine(counts)
        self.state.cursors[Layer.MARKET] = cursor.advanced(nxt.position)

        reg_cursor = self.state.cursor(Layer.REGISTRATION)
        if until > reg_cursor.position:
            regs = self.source.scan_token_registrations(reg_cursor.position + 1, until)
            new = sum(self.store.insert_registration(r) for r in regs)
            counts.detail["registrations"] = counts.detail.get("registrations", 0) + new
            self.state.cursors[Layer.REGISTRATION] = reg_cursor.advanced(until)

    def _merge_market(self, market: MarketRecord) -> bool:
        changed = self.store.upsert_market(market)
        if changed:
            self._register_tokens(market)
            self.oracle_bridge.add_market(market.condition_id)
        return changed

    def _register_tokens(self, market: MarketRecord):
        before = dict(self.token_bridge.entries)
        try:
            self.token_bridge.register_market_tokens(market)
        except ConflictingMapping as exc:
            log.warning("%s", exc)
            self.store.record_conflicts(exc.conflicts)
        for asset, entry in self.token_bridge.entries.items():
            if before.get(asset) != entry:
                self.store.save_token_mapping(asset, *entry)

    def _fill_step(self, lo: int, hi: int, report: CycleReport):
        counts = report.counts(Layer.FILL)
        batch = self.source.poll_fills(lo, hi)
        res = self.ingest_fills(batch)
        counts.ingested += res.inserted
        counts.deduped += res.duplicate
        counts.quarantined += res.quarantined
        counts.detail["unresolved"] = counts.detail.get("unresolved", 0) + res.unresolved
        self._drain_source_quarantine(counts)
        self.state.cursors[Layer.FILL] = self.state.cursor(Layer.FILL).advanced(hi)

    def _retry_step(self, report: CycleReport):
        if not self.toggles.retry:
            return
        resolved, exhausted = self.process_retry_queue(self.max_attempts)
        counts = report.counts(Layer.FILL)
        counts.detail["retry_resolved"] = counts.detail.get("retry_resolved", 0) + resolved
        counts.detail["retry_exhausted"] = counts.detail.get("retry_exhausted", 0) + exhausted

    def _oracle_step(self, until: int, report: CycleReport):
        counts = report.counts(Layer.ORACLE)
        cursor = self.state.cursor(Layer.ORACLE)
        batch, nxt = self.source.poll_oracle_events(cursor, until)
        res = self.ingest_oracle(batch)
        counts.ingested += res.inserted
        counts.deduped += res.duplicate
        counts.quarantined += res.quarantined
        counts.detail["linked"] = counts.detail.get("linked", 0) + res.linked
        counts.detail["unlinked"] = counts.detail.get("unlinked", 0) + res.unlinked
        counts.detail["relinked"] = counts.detail.get("relinked", 0) + self.relink_oracle()
        self._drain_source_quarantine(counts)
        self.state.cursors[Layer.ORACLE] = cursor.advanced(nxt.position)

    def _drain_source_quarantine(self, counts: LayerCounts):
        for q in self.source.drain_quarantine():
            if self.store.quarantine(q.layer, q.position, q.reason):
                counts.quarantined += 1

    # -- fills --------------------------------------------------------------

    def ingest_fills(self, batch: list[FillRecord]) -> IngestResult:
        """Insert new fills keyed by (tx hash, log index), resolving each token to a market."""
        res = IngestResult()
        fresh = []
        seen = set()
        for f in batch:
            problems = validate_fill(f)
            if problems:
                self.store.quarantine(Layer.FILL.value, f"{f.block_number}:{f.tx_hash}:{f.log_index}",
                                      ",".join(problems))
                res.quarantined += 1
            elif f.key in seen or self.store.has_fill(f.key):
                res.duplicate += 1
            else:
                seen.add(f.key)
                fresh.append(f)
        stamps = self.timestamps_for({f.block_number for f in fresh})
        pending: Counter = Counter()
        first_block = {}
        for f in fresh:
            market_id = self._resolve_fill_market(f.asset_id)
            stored = replace(f, market_id=market_id,
                             meta=FillMeta(f.meta.source_contract, f.meta.side, stamps[f.block_number]))
            self.store.insert_fill(stored)
            res.inserted += 1
            if market_id is None:
                res.unresolved += 1
                pending[f.asset_id] += 1
                first_block.setdefault(f.asset_id, f.block_number)
        if self.toggles.retry:
            for asset, n in pending.items():
                self.store.enqueue_retry(asset, first_block[asset], n)
        return res

    def _resolve_fill_market(self, asset_id: str) -> str | None:
        mid = self.token_bridge.resolve(asset_id)
        if mid is not None:
            return mid
        if self.toggles.onchain_recovery:
            try:
                return self.recover_market(asset_id).condition_id
            except NotFound:
                return None
        return None

    def recover_market(self, asset_id: str) -> MarketRecord:
        """Rebuild a minimal market for `asset_id` from its on-chain token registration."""
        mid = self.token_bridge.resolve(asset_id)
        if mid is not None:
            existing = self.store.get_market(mid)
            if existing is not None:
                return existing
        reg = self.store.registration_for_token(asset_id)
        if reg is None:
            raise NotFound(asset_id)
        existing = self.store.get_market(reg.condition_id)
        if existing is not None:
            for token in (reg.token0, reg.token1):
                if self.token_bridge.resolve(token) is None:
                    self.token_bridge.insert(token, reg.condition_id, TokenSource.ONCHAIN_REGISTRATION)
                    self.store.save_token_mapping(token, reg.condition_id,
                                                  TokenSource.ONCHAIN_REGISTRATION)
            return existing
        created = self.timestamps_for({reg.block_number})[reg.block_number]
        market = MarketRecord(
            condition_id=reg.condition_id,
            oracle_address=self.recovery_oracles[reg.source_contract],
            yes_token=reg.token0, no_token=reg.token1,
            metadata=MarketMetadata(slug="", title="", description="", created_at=created),
            provenance=Provenance.ONCHAIN_RECOVERED,
        )
        self._merge_market(market)
        return market

    def process_retry_queue(self, max_attempts: int = DEFAULT_MAX_ATTEMPTS) -> tuple[int, int]:
        resolved = exhausted = 0
        for entry in self.store.retry_entries():
            asset = entry["asset_id"]
            mid = self._resolve_fill_market(asset)
            if mid is not None:
                self.store.link_fills(asset, mid)
                self.store.retry_resolved(asset)
                resolved += 1
            else:
                done = entry["attempts"] + 1 >= max_attempts
                self.store.retry_attempted(asset, done)
                exhausted += done
        return resolved, exhausted

    # -- oracle -------------------------------------------------------------

    def ingest_oracle(self, batch: list[OracleEvent]) -> IngestResult:
        res = IngestResult()
        seen = set()
        for e in batch:
            problems = validate_oracle_event(e)
            if problems:
                self.store.quarantine(Layer.ORACLE.value, f"{e.block_number}:{e.tx_hash}:{e.log_index}",
                                      ",".join(problems))
                res.quarantined += 1
                continue
            if e.key in seen or self.store.has_oracle_event(e.key):
                res.duplicate += 1
                continue
            seen.add(e.key)
            for kind, key, value in self.oracle_bridge.observe(e):
                self.store.save_oracle_mapping(kind, key, value)
            market_id, path = self.oracle_bridge.resolve_oracle_event(e, self.toggles.bridge_paths)
            self.store.insert_oracle_event(replace(e, market_id=market_id),
                                           path.value if path else None)
            res.inserted += 1
            if market_id is None:
                res.unlinked += 1
            else:
                res.linked += 1
        return res

    def relink_oracle(self) -> int:
        n = 0
        for e in self.store.unlinked_oracle_events():
            market_id, path = self.oracle_bridge.resolve_oracle_event(e, self.toggles.bridge_paths)
            if market_id is not None:
                self.store.link_oracle_event(e, market_id, path.value)
                n += 1
        return n

    # -- timestamp cache ----------------------------------------------------

    def timestamps_for(self, blocks: Iterable[int]) -> dict[int, datetime]:
        blocks = sorted(set(blocks))
        if not blocks:
            return {}
        if not self.toggles.timestamp_cache:
            out = {}
            for b in blocks:
                out[b] = self.source.block_timestamp(b)
                self.cache.fetches += 1
            return out
        out = self.store.cached_timestamps(blocks)
        self.cache.hits += len(out)
        for b in blocks:
            if b in out:
                continue
            ts = self.source.block_timestamp(b)
            self.cache.misses += 1
            self.cache.fetches += 1
            self.store.cache_timestamp(b, ts)
            out[b] = ts
        return out
