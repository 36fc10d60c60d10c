"""Universe persistence as canonical line-record fixture directories."""
from __future__ import annotations

import json
from pathlib import Path

from ..model import (FillRecord, MarketRecord, OracleEvent, TokenRegistration, dumps,
                     format_ts, from_record, parse_ts, read_lines, write_lines)
from .base import Layer, Quarantined, Universe, UniverseSource

STREAM_FILES = {
    Layer.MARKET: ("markets.jsonl", MarketRecord),
    Layer.FILL: ("fills.jsonl", FillRecord),
    Layer.ORACLE: ("oracle_events.jsonl", OracleEvent),
    Layer.REGISTRATION: ("registrations.jsonl", TokenRegistration),
}
MANIFEST = "manifest.json"


def write_universe(universe: Universe, directory) -> dict[str, int]:
    """Write every stream plus a manifest; returns record counts per layer."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    counts = {
        "markets": write_lines(out / "markets.jsonl", (m for _, m in universe.markets)),
        "fills": write_lines(out / "fills.jsonl", universe.fills),
        "oracle_events": write_lines(out / "oracle_events.jsonl", universe.oracle_events),
        "registrations": write_lines(out / "registrations.jsonl", universe.registrations),
    }
    manifest = {
        "start_time": format_ts(universe.start_time),
        "block_seconds": universe.block_seconds,
        "head": universe.head,
        "market_blocks": [b for b, _ in universe.markets],
        "counts": counts,
    }
    (out / MANIFEST).write_text(dumps(manifest) + "\n", encoding="utf-8")
    (out / "truth.json").write_text(dumps(universe.truth) + "\n", encoding="utf-8")
    return counts


def load_universe(directory) -> tuple[Universe, list[Quarantined]]:
    src = Path(directory)
    manifest = json.loads((src / MANIFEST).read_text(encoding="utf-8"))
    bad: list[Quarantined] = []
    streams = {}
    for layer, (name, cls) in STREAM_FILES.items():
        items = []
        path = src / name
        if path.exists():
            for lineno, line in read_lines(path):
                try:
                    items.append((lineno, from_record(cls, json.loads(line))))
                except (ValueError, KeyError, TypeError) as exc:
                    bad.append(Quarantined(layer.value, lineno, f"{type(exc).__name__}: {exc}"))
        streams[layer] = items
    blocks = manifest.get("market_blocks", [])
    markets = [(blocks[lineno] if lineno < len(blocks) else manifest["head"], m)
               for lineno, m in streams[Layer.MARKET]]
    truth_path = src / "truth.json"
    truth = json.loads(truth_path.read_text(encoding="utf-8")) if truth_path.exists() else {}
    universe = Universe(
        start_time=parse_ts(manifest["start_time"]), block_seconds=int(manifest["block_seconds"]),
        head=int(manifest["head"]), markets=markets,
        fills=[f for _, f in streams[Layer.FILL]],
        oracle_events=[e for _, e in streams[Layer.ORACLE]],
        registrations=[r for _, r in streams[Layer.REGISTRATION]],
        truth=truth,
    )
    return universe, bad


class FixtureSource(UniverseSource):
    def __init__(self, directory):
        universe, bad = load_universe(directory)
        super().__init__(universe)
        self.quarantine.extend(bad)
