"""Command-line entry point: simulate, backfill, sync, quality, analyze."""
from __future__ import annotations

import csv
import functools
import json
import logging
import signal
import sqlite3
import sys
import time
from dataclasses import asdict
from datetime import date, datetime, timedelta
from pathlib import Path

import click

from .analytics import activity, calibration, cpi, fees, oracle_risk
from .config import EngineConfig, SourceKind, apply_toggle, describe, load_config
from .errors import (DecodeError, InvalidConfig, SourceUnavailable, StorageUnavailable,
                     UnknownBlock)
from .ingestion import SyncEngine
from .model import format_ts
from .sources import FixtureSource, LiveSource, SimulatorSource, generate_lifecycle, write_universe
from .sources.cpi_fixture import CpiFixtureConfig, generate_cpi_universe
from .storage import Store

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_SOURCE = 4
EXIT_STORAGE = 5

log = logging.getLogger("pmlife")


# -- plumbing ---------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, datetime):
        return format_ts(v)
    if isinstance(v, date):
        return v.isoformat()
    if isinstance(v, (set, frozenset, tuple)):
        return list(v)
    if hasattr(v, "value"):
        return v.value
    raise TypeError(f"not serializable: {type(v).__name__}")


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, default=_jsonable, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return _jsonable(v) if isinstance(v, (datetime, date)) else v


def write_csv(path: Path, header, rows) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
            n += 1
    return n


def guarded(fn):
    """Map engine failures onto distinct exit codes."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except InvalidConfig as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (SourceUnavailable, DecodeError, UnknownBlock) as exc:
            click.echo(f"source error: {exc}", err=True)
            sys.exit(EXIT_SOURCE)
        except (StorageUnavailable, sqlite3.Error) as exc:
            click.echo(f"storage error: {exc}", err=True)
            sys.exit(EXIT_STORAGE)
    return wrapper


def common(fn):
    fn = click.option("--toggle", "toggles", multiple=True, metavar="NAME=on|off",
                      help="Override a feature toggle (onchain_recovery, retry, timestamp_cache, "
                           "bridge.direct, bridge.adapter, bridge.negrisk).")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default=None,
                      help="Output directory (default: output_dir from the config).")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override simulator seed.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="YAML configuration file.")(fn)
    return fn


def resolve_config(config_path, seed, toggles) -> EngineConfig:
    cfg = load_config(config_path)
    if seed is not None:
        cfg.simulator.seed = seed
        cfg.simulator.validate()
    for spec in toggles:
        cfg.toggles = apply_toggle(cfg.toggles, spec)
    return cfg


def out_dir(cfg: EngineConfig, out) -> Path:
    return Path(out) if out else Path(cfg.output_dir)


def open_store(cfg: EngineConfig) -> Store:
    if cfg.storage != ":memory:":
        try:
            Path(cfg.storage).parent.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageUnavailable(str(exc)) from exc
    return Store(cfg.storage)


def build_source(cfg: EngineConfig):
    if cfg.source_kind is SourceKind.SIMULATOR:
        return SimulatorSource(cfg.simulator)
    if cfg.source_kind is SourceKind.FIXTURES:
        try:
            return FixtureSource(cfg.fixtures_dir)
        except (OSError, KeyError, ValueError) as exc:
            raise SourceUnavailable(f"cannot load fixtures from {cfg.fixtures_dir}: {exc}") from exc
    return LiveSource(cfg.contracts.fill_exchanges, cfg.contracts.oracles)


def build_engine(cfg: EngineConfig, store: Store) -> SyncEngine:
    return SyncEngine(store, build_source(cfg), cfg.toggles, max_attempts=cfg.max_attempts,
                      blocks_per_cycle=cfg.blocks_per_cycle,
                      confirmation_depth=cfg.confirmation_depth,
                      recovery_oracles=cfg.recovery_oracles())


def echo_json(obj) -> None:
    click.echo(json.dumps(obj, default=_jsonable, sort_keys=True))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log cycle progress to stderr.")
def main(verbose):
    """Prediction-market lifecycle data engine."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


# -- simulate ---------------------------------------------------------------

@main.command()
@common
@click.option("--scenario", type=click.Choice(["lifecycle", "cpi"]), default="lifecycle",
              show_default=True, help="Market lifecycle universe or CPI bucket fixture.")
@guarded
def simulate(config_path, seed, out, toggles, scenario):
    """Write a deterministic fixture directory."""
    cfg = resolve_config(config_path, seed, toggles)
    target = out_dir(cfg, out)
    if scenario == "cpi":
        fx = CpiFixtureConfig() if seed is None else CpiFixtureConfig(seed=seed)
        universe = generate_cpi_universe(fx)
    else:
        universe = generate_lifecycle(cfg.simulator)
    counts = write_universe(universe, target)
    stats = dict(counts)
    if scenario == "lifecycle":
        n = len(universe.truth["category"])
        stats["disputed_markets"] = len(universe.truth["disputed"])
        stats["disputed_share"] = len(universe.truth["disputed"]) / n if n else None
        stats["withheld_markets"] = len(universe.truth["withheld"])
    stats["head_block"] = universe.head
    stats["out"] = str(target)
    echo_json(stats)


# -- ingestion --------------------------------------------------------------

@main.command()
@common
@click.option("--from-block", type=int, required=True)
@click.option("--to-block", type=int, required=True)
@click.option("--window", type=int, default=None, help="Blocks per batch (default: whole range).")
@click.option("--step", type=int, default=None, help="Advance per batch; < window replays overlaps.")
@guarded
def backfill(config_path, seed, out, toggles, from_block, to_block, window, step):
    """Ingest an explicit block range."""
    cfg = resolve_config(config_path, seed, toggles)
    if to_block < from_block or from_block < 0:
        raise InvalidConfig("need 0 <= --from-block <= --to-block")
    store = open_store(cfg)
    try:
        engine = build_engine(cfg, store)
        for rep in engine.backfill(from_block, to_block, window, step):
            echo_json(rep.to_record())
    finally:
        store.close()


@main.command()
@common
@click.option("--cycles", type=int, default=None, help="Run exactly N cycles.")
@click.option("--daemon", is_flag=True, help="Loop forever at the configured interval.")
@guarded
def sync(config_path, seed, out, toggles, cycles, daemon):
    """Run incremental sync cycles (until caught up by default)."""
    cfg = resolve_config(config_path, seed, toggles)
    if cycles is not None and cycles < 0:
        raise InvalidConfig("--cycles must be >= 0")
    store = open_store(cfg)
    try:
        engine = build_engine(cfg, store)
        if not daemon:
            for rep in engine.run(cycles):
                echo_json(rep.to_record())
            return
        _daemon(engine, cfg.cycle_interval_seconds, cycles)
    finally:
        store.close()


def _daemon(engine: SyncEngine, interval: float, cycles):
    # every layer batch commits with its cursor, so stopping between or inside
    # cycles loses at most the uncommitted batch
    def _stop(signum, frame):
        raise KeyboardInterrupt

    previous = signal.signal(signal.SIGTERM, _stop)
    done = 0
    try:
        while cycles is None or done < cycles:
            _, rep = engine.run_cycle()
            echo_json(rep.to_record())
            done += 1
            time.sleep(interval)
    except KeyboardInterrupt:
        click.echo(f"stopped after {done} cycles; state persisted", err=True)
    finally:
        signal.signal(signal.SIGTERM, previous)


@main.command()
@common
@guarded
def quality(config_path, seed, out, toggles):
    """Write the data-quality report."""
    cfg = resolve_config(config_path, seed, toggles)
    store = open_store(cfg)
    try:
        rep = store.compute_quality()
    finally:
        store.close()
    target = out_dir(cfg, out)
    write_csv(target / "quality.csv", ["metric", "value", "rate"], rep.rows())
    write_json(target / "quality.json", rep.to_dict())
    click.echo(rep.render(), nl=False)


# -- analyses ---------------------------------------------------------------

ANALYSES = ("activity", "fees", "oracle", "nba", "cpi")


@main.command()
@common
@click.argument("analysis", type=click.Choice(ANALYSES))
@click.option("--event-slug", default=None, help="cpi: restrict to one bucket group.")
@click.option("--grid-hours", type=float, default=None, help="cpi: grid spacing in hours.")
@guarded
def analyze(config_path, seed, out, toggles, analysis, event_slug, grid_hours):
    """Run one analysis over the store; writes CSV tables plus a JSON summary."""
    cfg = resolve_config(config_path, seed, toggles)
    target = out_dir(cfg, out)
    store = open_store(cfg)
    try:
        if analysis in ("activity", "fees"):
            store.materialize_summaries()
        runner = {"activity": run_activity, "fees": run_fees, "oracle": run_oracle,
                  "nba": run_nba, "cpi": run_cpi}[analysis]
        kwargs = {"event_slug": event_slug, "grid_hours": grid_hours} if analysis == "cpi" else {}
        summary = runner(store, cfg, target, **kwargs)
    finally:
        store.close()
    write_json(target / f"{analysis}_summary.json", summary)
    echo_json(summary)


def run_activity(store: Store, cfg: EngineConfig, target: Path) -> dict:
    summaries = store.summaries()
    fills = store.fills("market_id IS NOT NULL")
    series = activity.daily_activity(summaries, fills)
    write_csv(target / "activity_daily.csv",
              ["day", "transactions", "active_wallets", "traded_markets",
               "transactions_norm", "active_wallets_norm", "traded_markets_norm"],
              ([d.day, d.transactions, d.active_wallets, d.traded_markets, d.transactions_norm,
                d.active_wallets_norm, d.traded_markets_norm] for d in series))
    topics = activity.market_topics(store.markets(), cfg.analysis.topic_priority)
    rolling = activity.rolling_volume_by_topic(summaries, topics, cfg.analysis.rolling_window_days)
    write_csv(target / "activity_rolling_volume.csv", ["topic", "day", "rolling_volume"],
              ([t, d, v] for t, pts in rolling.items() for d, v in pts))
    return {
        "days": len(series),
        "first_day": series[0].day if series else None,
        "last_day": series[-1].day if series else None,
        "total_transactions": sum(d.transactions for d in series),
        "topics": sorted(rolling),
        "window_days": cfg.analysis.rolling_window_days,
    }


def run_fees(store: Store, cfg: EngineConfig, target: Path) -> dict:
    summaries = store.summaries()
    category_of = activity.market_topics(store.markets(), cfg.analysis.topic_priority)
    rows = fees.fee_rates(summaries, category_of)
    write_csv(target / "fees_market_rates.csv",
              ["market_id", "category", "effective_fee_rate", "volume", "positive_fee_days"],
              ([r.market_id, r.category, r.rate, r.volume, r.positive_fee_days] for r in rows))
    cats = fees.category_fee_summary(summaries, category_of)
    write_csv(target / "fees_categories.csv",
              ["category", "trade_value", "total_fee", "pooled_rate", "first_nonzero_fee_date",
               "positive_fee_markets"],
              ([c.category, c.trade_value, c.total_fee,
                fees.pooled_rate(c.trade_value, c.total_fee) if c.trade_value else None,
                c.first_nonzero_fee_date, c.positive_fee_markets] for c in cats))
    tests = fees.fee_tests(rows, min_group=cfg.analysis.fee_min_group)
    return {
        "markets_with_fees": len(rows),
        "first_nonzero_fee_date": {c.category: c.first_nonzero_fee_date for c in cats
                                   if c.first_nonzero_fee_date is not None},
        "tests": asdict(tests),
    }


def run_oracle(store: Store, cfg: EngineConfig, target: Path) -> dict:
    events = store.oracle_events("market_id IS NOT NULL")
    fills = store.fills("market_id IS NOT NULL")
    anchors = oracle_risk.risk_anchors(events, fills)
    write_csv(target / "oracle_anchors.csv",
              ["market_id", "anchor_time", "anchor_kind", "continued_betting", "first_trade_delay_hours"],
              ([a.market_id, a.anchor_time, a.anchor_kind.value, int(a.continued_betting),
                a.first_trade_delay_hours] for a in anchors))
    disputed = [a for a in anchors if a.anchor_kind is oracle_risk.AnchorKind.FIRST_DISPUTE]
    stats = oracle_risk.post_anchor_histogram(disputed, fills)
    write_csv(target / "oracle_post_anchor.csv",
              ["hour", "trades", "first_trades", "cumulative_share"],
              ([h, stats.hourly_trades[h], stats.first_trade_hist[h], stats.cumulative[h]]
               for h in range(len(stats.hourly_trades))))
    return {
        "markets_with_anchor": len(anchors),
        "dispute_anchored": len(disputed),
        "continued_betting_share": (sum(a.continued_betting for a in anchors) / len(anchors)
                                    if anchors else None),
        "dispute_cohort": asdict(stats),
    }


def run_nba(store: Store, cfg: EngineConfig, target: Path) -> dict:
    a = cfg.analysis
    matcher = calibration.TeamMatcher(a.nba_teams)
    outcomes = calibration.oracle_outcomes(store.oracle_events("market_id IS NOT NULL"))
    samples = calibration.build_calibration_dataset(store.markets(), store.fills("market_id IS NOT NULL"),
                                                    outcomes, matcher)
    train, test = calibration.split_by_season(samples, a.test_season)
    iso = calibration.isotonic_fit([s.p for s in train], [s.y for s in train]) if train else None
    rows, bins, metrics = [], [], {}
    for split, part in (("train", train), ("test", test)):
        for s in part:
            rows.append([s.market_id, s.team, s.p, s.y, s.season, split, iso(s.p) if iso else None])
        if not part:
            continue
        variants = [("raw", [s.p for s in part])]
        if iso:
            variants.append(("isotonic", iso.predict(s.p for s in part)))
        for name, preds in variants:
            rep = calibration.calibration_metrics(preds, [s.y for s in part], a.calibration_bins)
            metrics[f"{split}_{name}"] = {"n": rep.n, "brier": rep.brier, "log_loss": rep.log_loss,
                                          "ece": rep.ece, "mce": rep.mce}
            bins += [[split, name, b.lower, b.upper, b.count, b.confidence, b.accuracy] for b in rep.bins]
    write_csv(target / "nba_samples.csv",
              ["market_id", "team", "p", "y", "season", "split", "p_isotonic"], rows)
    write_csv(target / "nba_reliability.csv",
              ["split", "variant", "bin_lower", "bin_upper", "count", "confidence", "accuracy"], bins)
    return {"markets": len({s.market_id for s in samples}), "samples": len(samples),
            "train": len(train), "test": len(test), "test_season": a.test_season, "metrics": metrics}


def run_cpi(store: Store, cfg: EngineConfig, target: Path, event_slug=None, grid_hours=None) -> dict:
    a = cfg.analysis
    markets = store.markets()
    groups = cpi.bucket_groups(markets, a.cpi_resolution)
    if event_slug is not None:
        groups = {k: v for k, v in groups.items() if k == event_slug}
    yes = {m.condition_id: m.tokens()[0] for m in markets if m.tokens()}
    step = timedelta(hours=grid_hours or a.cpi_grid_hours)
    window = timedelta(hours=a.cpi_window_hours)
    rows, summary = [], {}
    for slug in sorted(groups):
        group = groups[slug]
        fills = [f for mid in sorted(group) for f in store.fills_for_market(mid)]
        trades = cpi.trades_from_fills(fills, yes)
        if not trades:
            summary[slug] = {"points": 0}
            continue
        first = min(t.timestamp for t in trades).replace(minute=0, second=0, microsecond=0) + step
        last = max(t.timestamp for t in trades) + step
        path = cpi.implied_cpi_path(group, trades, cpi.time_grid(first, last, step), window,
                                    a.cpi_min_prob, a.cpi_sigma_floor)
        rows += [[slug, p.t, p.mu_t, p.sigma_t, p.tokens_used, p.fit_residual] for p in path]
        summary[slug] = {"points": len(path), "buckets": len(group),
                         "first_mu": path[0].mu_t if path else None,
                         "last_mu": path[-1].mu_t if path else None}
    write_csv(target / "cpi_path.csv", ["event_slug", "t", "mu_t", "sigma_t", "tokens_used", "fit_residual"],
              rows)
    return {"groups": summary, "grid_hours": step.total_seconds() / 3600}


@main.command("config")
@common
@guarded
def show_config(config_path, seed, out, toggles):
    """Print the effective configuration summary."""
    echo_json(describe(resolve_config(config_path, seed, toggles)))


if __name__ == "__main__":
    main()
