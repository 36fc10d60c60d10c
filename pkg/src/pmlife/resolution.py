"""Bridge layer: token -> market and oracle event -> market identifier resolution."""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .errors import ConflictingMapping
from .model import MarketRecord, OracleEvent, OracleEventType, TokenRegistration


class TokenSource(str, enum.Enum):
    API_CLOB_IDS = "api_clob_ids"
    API_TOKEN_FIELDS = "api_token_fields"
    ONCHAIN_REGISTRATION = "onchain_registration"


# lower value wins
TOKEN_SOURCE_PRIORITY = {
    TokenSource.API_CLOB_IDS: 0,
    TokenSource.API_TOKEN_FIELDS: 1,
    TokenSource.ONCHAIN_REGISTRATION: 2,
}


class LinkPath(str, enum.Enum):
    DIRECT = "direct"
    ADAPTER = "adapter"
    NEGRISK = "negrisk"


ALL_PATHS = frozenset(LinkPath)
PATH_ORDER = (LinkPath.DIRECT, LinkPath.ADAPTER, LinkPath.NEGRISK)

# meta key carrying a negative-risk request identifier on oracle events
REQUEST_ID_KEY = "request_id"


@dataclass
class TokenBridge:
    entries: dict[str, tuple[str, TokenSource]] = field(default_factory=dict)

    def insert(self, asset_id: str, condition_id: str, source: TokenSource):
        """Insert one mapping.

        Returns (changed, conflict) where conflict is (asset, kept, rejected) or None.
        A conflicting mapping from a strictly higher-priority source replaces the
        existing one so that the outcome does not depend on arrival order.
        """
        source = TokenSource(source)
        current = self.entries.get(asset_id)
        if current is None:
            self.entries[asset_id] = (condition_id, source)
            return True, None
        cur_cond, cur_src = current
        higher = TOKEN_SOURCE_PRIORITY[source] < TOKEN_SOURCE_PRIORITY[cur_src]
        if cur_cond == condition_id:
            if higher:
                self.entries[asset_id] = (condition_id, source)
                return True, None
            return False, None
        if higher:
            self.entries[asset_id] = (condition_id, source)
            return True, (asset_id, condition_id, cur_cond)
        return False, (asset_id, cur_cond, condition_id)

    def register_market_tokens(self, market: MarketRecord) -> int:
        """Map each outcome token of `market` to its condition id; returns new entries.

        Raises ConflictingMapping after all non-conflicting tokens are applied.
        """
        if market.clob_token_ids:
            pairs = [(t, TokenSource.API_CLOB_IDS) for t in market.clob_token_ids]
        else:
            pairs = [(t, TokenSource.API_TOKEN_FIELDS) for t in (market.yes_token, market.no_token) if t]
        if market.provenance.value == "onchain_recovered":
            pairs = [(t, TokenSource.ONCHAIN_REGISTRATION) for t, _ in pairs]
        return self._apply(market.condition_id, pairs)

    def register_onchain(self, reg: TokenRegistration) -> int:
        return self._apply(reg.condition_id, [(reg.token0, TokenSource.ONCHAIN_REGISTRATION),
                                              (reg.token1, TokenSource.ONCHAIN_REGISTRATION)])

    def _apply(self, condition_id, pairs) -> int:
        new = 0
        conflicts = []
        for token, source in pairs:
            existed = token in self.entries
            changed, conflict = self.insert(token, condition_id, source)
            if changed and not existed:
                new += 1
            if conflict:
                conflicts.append(conflict)
        if conflicts:
            raise ConflictingMapping(conflicts)
        return new

    def resolve(self, asset_id: str) -> str | None:
        hit = self.entries.get(asset_id)
        return hit[0] if hit else None

    def source_of(self, asset_id: str) -> TokenSource | None:
        hit = self.entries.get(asset_id)
        return hit[1] if hit else None

    def __len__(self):
        return len(self.entries)


@dataclass
class OracleBridge:
    question_to_condition: dict[str, str] = field(default_factory=dict)
    request_to_question: dict[str, str] = field(default_factory=dict)
    # condition id -> market id; market ids are condition ids of canonical markets
    condition_to_market: dict[str, str] = field(default_factory=dict)

    def add_market(self, condition_id: str) -> None:
        self.condition_to_market[condition_id] = condition_id

    def observe(self, event: OracleEvent) -> list[tuple[str, str, str]]:
        """Learn mappings from an adapter initialize event.

        Returns the new (kind, key, value) entries.
        """
        learned = []
        if event.event_type is not OracleEventType.INITIALIZE:
            return learned
        if event.question_id and event.condition_id:
            if event.question_id not in self.question_to_condition:
                self.question_to_condition[event.question_id] = event.condition_id
                learned.append(("question", event.question_id, event.condition_id))
        req = event.meta.get(REQUEST_ID_KEY)
        if req and event.question_id and req not in self.request_to_question:
            self.request_to_question[req] = event.question_id
            learned.append(("request", req, event.question_id))
        return learned

    def resolve_oracle_event(self, event: OracleEvent,
                             paths: Iterable[LinkPath] = ALL_PATHS):
        """Return (market_id, path) for the first path that links, else (None, None)."""
        enabled = {LinkPath(p) for p in paths}
        for path in PATH_ORDER:
            if path not in enabled:
                continue
            market = self._try(path, event)
            if market is not None:
                return market, path
        return None, None

    def _try(self, path, event):
        if path is LinkPath.DIRECT:
            cond = event.condition_id
        elif path is LinkPath.ADAPTER:
            cond = self.question_to_condition.get(event.question_id) if event.question_id else None
        else:
            req = event.meta.get(REQUEST_ID_KEY)
            q = self.request_to_question.get(req) if req else None
            cond = self.question_to_condition.get(q) if q else None
        if cond is None:
            return None
        return self.condition_to_market.get(cond)


@dataclass
class BridgeStats:
    total: int
    linked: int
    by_path: dict[str, int]
    by_type: dict[str, tuple[int, int]]

    @property
    def rate(self) -> float | None:
        return self.linked / self.total if self.total else None

    def type_rate(self, event_type: str) -> float | None:
        linked, total = self.by_type.get(event_type, (0, 0))
        return linked / total if total else None


def bridge_stats(outcomes: Iterable[tuple[str, str | None]]) -> BridgeStats:
    """Linkage accounting over (event_type, path-or-None) pairs."""
    by_path: Counter = Counter()
    typed_total: Counter = Counter()
    typed_linked: Counter = Counter()
    for etype, path in outcomes:
        etype = OracleEventType(etype).value
        typed_total[etype] += 1
        if path:
            by_path[LinkPath(path).value] += 1
            typed_linked[etype] += 1
    total = sum(typed_total.values())
    return BridgeStats(
        total=total,
        linked=sum(by_path.values()),
        by_path={p.value: by_path.get(p.value, 0) for p in PATH_ORDER},
        by_type={t: (typed_linked[t], typed_total[t]) for t in sorted(typed_total)},
    )
