"""Engine configuration: one YAML file plus command-line overrides.

Top-level keys (all optional):

    storage: path of the sqlite store (default pmlife.db)
    output_dir: directory for analysis outputs (default out)
    source: {kind: simulator|fixtures|live, fixtures_dir: path}
    simulator: SimConfig fields (seed, n_markets, dispute_rate, ...)
    contracts: {fill_exchanges: [...], oracles: [...],
                adapters: {ctf_exchange: addr, negrisk_exchange: addr}}
    sync: {cycle_interval_seconds, confirmation_depth, blocks_per_cycle, max_attempts}
    toggles: {onchain_recovery, retry, timestamp_cache: bool,
              bridge_paths: [direct, adapter, negrisk]}
    analysis: {topic_priority, rolling_window_days, nba_teams, test_season,
               calibration_bins, fee_min_group, cpi_resolution,
               cpi_window_hours, cpi_min_prob, cpi_grid_hours, cpi_sigma_floor}

Secrets for the live adapters come from environment variables only.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .analytics.activity import TOPIC_PRIORITY
from .errors import InvalidConfig
from .ingestion import DEFAULT_BLOCKS_PER_CYCLE, DEFAULT_MAX_ATTEMPTS, Toggles
from .model import Exchange
from .resolution import PATH_ORDER, LinkPath
from .sources.simulator import ADAPTER_FOR, NBA_TEAMS, OPTIMISTIC_ORACLE, SimConfig


class SourceKind(str, enum.Enum):
    SIMULATOR = "simulator"
    FIXTURES = "fixtures"
    LIVE = "live"


@dataclass
class Contracts:
    fill_exchanges: tuple[str, ...] = ()
    oracles: tuple[str, ...] = (OPTIMISTIC_ORACLE,)
    adapters: dict = field(default_factory=lambda: {e.value: a for e, a in ADAPTER_FOR.items()})


@dataclass
class AnalysisConfig:
    topic_priority: tuple[str, ...] = TOPIC_PRIORITY
    rolling_window_days: int = 30
    nba_teams: tuple[str, ...] = NBA_TEAMS
    test_season: int = 2026
    calibration_bins: int = 10
    fee_min_group: int = 30
    cpi_resolution: float = 0.1
    cpi_window_hours: float = 24.0
    cpi_min_prob: float = 0.10
    cpi_grid_hours: float = 1.0
    cpi_sigma_floor: float = 0.01


@dataclass
class EngineConfig:
    storage: str = "pmlife.db"
    output_dir: str = "out"
    source_kind: SourceKind = SourceKind.SIMULATOR
    fixtures_dir: str | None = None
    simulator: SimConfig = field(default_factory=SimConfig)
    contracts: Contracts = field(default_factory=Contracts)
    cycle_interval_seconds: float = 30.0
    confirmation_depth: int = 0
    blocks_per_cycle: int = DEFAULT_BLOCKS_PER_CYCLE
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    toggles: Toggles = Toggles()
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def validate(self) -> None:
        if self.source_kind is SourceKind.FIXTURES and not self.fixtures_dir:
            raise InvalidConfig("source.kind=fixtures needs source.fixtures_dir")
        if self.cycle_interval_seconds < 0:
            raise InvalidConfig("sync.cycle_interval_seconds must be >= 0")
        if self.confirmation_depth < 0 or self.blocks_per_cycle < 1 or self.max_attempts < 1:
            raise InvalidConfig("sync settings out of range")
        for key in self.contracts.adapters:
            try:
                Exchange(key)
            except ValueError:
                raise InvalidConfig(f"contracts.adapters: unknown exchange {key!r}") from None
        self.simulator.validate()

    def recovery_oracles(self) -> dict:
        return {Exchange(k): v for k, v in self.contracts.adapters.items()}


def _section(raw, name) -> dict:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise InvalidConfig(f"{name} must be a mapping")
    return value


def _fill(cls, values: dict, where: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise InvalidConfig(f"{where}: unknown keys {', '.join(unknown)}")
    out = {}
    for k, v in values.items():
        default = getattr(cls(), k)
        if isinstance(default, tuple) and isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        out[k] = v
    return cls(**out)


def _sim_config(values: dict) -> SimConfig:
    values = dict(values)
    if "fee_regime" in values:
        # [[day, {category: rate}], ...]
        values["fee_regime"] = tuple((int(d), dict(r or {})) for d, r in values["fee_regime"])
    return _fill(SimConfig, values, "simulator")


def _toggles(values: dict) -> Toggles:
    unknown = sorted(set(values) - {"onchain_recovery", "retry", "timestamp_cache", "bridge_paths"})
    if unknown:
        raise InvalidConfig(f"toggles: unknown keys {', '.join(unknown)}")
    t = Toggles(**{k: bool(values[k]) for k in ("onchain_recovery", "retry", "timestamp_cache")
                   if k in values})
    if "bridge_paths" in values:
        try:
            t = t.with_paths(values["bridge_paths"] or ())
        except ValueError as exc:
            raise InvalidConfig(f"toggles.bridge_paths: {exc}") from None
    return t


TOP_KEYS = {"storage", "output_dir", "source", "simulator", "contracts", "sync", "toggles", "analysis"}


def config_from_dict(raw: dict | None, base: Path | None = None) -> EngineConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise InvalidConfig("configuration must be a mapping")
    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        raise InvalidConfig(f"unknown top-level keys: {', '.join(unknown)}")
    base = base or Path(".")

    def path(p):
        return str(p) if p is None or Path(p).is_absolute() else str(base / p)

    cfg = EngineConfig()
    if "storage" in raw:
        cfg.storage = raw["storage"] if raw["storage"] == ":memory:" else path(raw["storage"])
    if "output_dir" in raw:
        cfg.output_dir = path(raw["output_dir"])
    src = _section(raw, "source")
    extra = sorted(set(src) - {"kind", "fixtures_dir"})
    if extra:
        raise InvalidConfig(f"source: unknown keys {', '.join(extra)}")
    try:
        cfg.source_kind = SourceKind(src.get("kind", "simulator"))
    except ValueError:
        raise InvalidConfig("source.kind must be one of simulator, fixtures, live") from None
    if src.get("fixtures_dir"):
        cfg.fixtures_dir = path(src["fixtures_dir"])
    cfg.simulator = _sim_config(_section(raw, "simulator"))
    contracts = _section(raw, "contracts")
    cfg.contracts = _fill(Contracts, contracts, "contracts")
    sync = _section(raw, "sync")
    extra = sorted(set(sync) - {"cycle_interval_seconds", "confirmation_depth", "blocks_per_cycle",
                                "max_attempts"})
    if extra:
        raise InvalidConfig(f"sync: unknown keys {', '.join(extra)}")
    for k, v in sync.items():
        setattr(cfg, k, type(getattr(cfg, k))(v))
    cfg.toggles = _toggles(_section(raw, "toggles"))
    cfg.analysis = _fill(AnalysisConfig, _section(raw, "analysis"), "analysis")
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> EngineConfig:
    if path is None:
        return config_from_dict({})
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {p}: {exc}") from None
    except yaml.YAMLError as exc:
        raise InvalidConfig(f"invalid YAML in {p}: {exc}") from None
    return config_from_dict(raw, p.parent)


TOGGLE_NAMES = ("onchain_recovery", "retry", "timestamp_cache") + tuple(f"bridge.{p.value}" for p in PATH_ORDER)


def apply_toggle(toggles: Toggles, spec: str) -> Toggles:
    """Apply one ``name=on|off`` override; bridge paths are named bridge.<path>."""
    name, sep, value = spec.partition("=")
    name, value = name.strip(), value.strip().lower()
    if not sep or value not in ("on", "off"):
        raise InvalidConfig(f"toggle must look like name=on|off, got {spec!r}")
    on = value == "on"
    if name.startswith("bridge."):
        try:
            path = LinkPath(name[len("bridge."):])
        except ValueError:
            raise InvalidConfig(f"unknown toggle {name!r}; choose from {', '.join(TOGGLE_NAMES)}") from None
        paths = set(toggles.bridge_paths)
        paths = paths | {path} if on else paths - {path}
        return toggles.with_paths(paths)
    if name not in ("onchain_recovery", "retry", "timestamp_cache"):
        raise InvalidConfig(f"unknown toggle {name!r}; choose from {', '.join(TOGGLE_NAMES)}")
    return dataclasses.replace(toggles, **{name: on})


def describe(cfg: EngineConfig) -> dict[str, Any]:
    sim = dataclasses.asdict(cfg.simulator)
    sim["fee_regime"] = [[d, r] for d, r in cfg.simulator.fee_regime]
    return {
        "storage": cfg.storage,
        "output_dir": cfg.output_dir,
        "source": cfg.source_kind.value,
        "fixtures_dir": cfg.fixtures_dir,
        "simulator": sim,
        "contracts": dataclasses.asdict(cfg.contracts),
        "sync": {
            "cycle_interval_seconds": cfg.cycle_interval_seconds,
            "confirmation_depth": cfg.confirmation_depth,
            "blocks_per_cycle": cfg.blocks_per_cycle,
            "max_attempts": cfg.max_attempts,
        },
        "toggles": {
            "onchain_recovery": cfg.toggles.onchain_recovery,
            "retry": cfg.toggles.retry,
            "timestamp_cache": cfg.toggles.timestamp_cache,
            "bridge_paths": [p.value for p in PATH_ORDER if p in cfg.toggles.bridge_paths],
        },
        "analysis": dataclasses.asdict(cfg.analysis),
    }
