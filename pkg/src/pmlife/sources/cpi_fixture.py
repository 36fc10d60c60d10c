"""Bucket-market universe whose traded prices follow a known drifting Gaussian."""
from __future__ import annotations

from dataclasses import dataclass
from datetime import timedelta

import numpy as np

from ..analytics.cpi import parse_bucket_label, partition_masses
from ..model import (BASE_UNIT, Exchange, FillRecord, MarketMetadata, MarketRecord, Side,
                     TokenRegistration, format_ts, parse_ts)
from .base import Universe

DEFAULT_LABELS = ("≤0.0%", "0.1%", "0.2%", "0.3%", "≥0.4%")
CPI_ORACLE = "0x" + "c1" * 20


@dataclass(frozen=True)
class CpiFixtureConfig:
    seed: int = 11
    days: int = 20
    mu_start: float = 0.17
    mu_end: float = 0.23
    sigma: float = 0.15
    labels: tuple[str, ...] = DEFAULT_LABELS
    trades_per_day: int = 4
    block_seconds: int = 2
    start_time: str = "2025-02-01T00:00:00Z"
    event_slug: str = "cpi-mom-2025-02"

    def mu_on(self, day: int) -> float:
        if self.days <= 1:
            return self.mu_start
        return self.mu_start + (self.mu_end - self.mu_start) * day / (self.days - 1)


def _hex(rng, n):
    return "0x" + rng.bytes(n).hex()


def generate_cpi_universe(config: CpiFixtureConfig = CpiFixtureConfig()) -> Universe:
    """Each bucket trades at its exact model mass during each UTC day.

    mu is constant within a day, so a 24h window ending at a day boundary sees a
    single mu. Prices are quantized to 1e-6 through integer amounts. truth["mu"]
    maps each day-end timestamp to the mu in force during that day.
    """
    rng = np.random.default_rng(config.seed)
    start = parse_ts(config.start_time)
    bs = config.block_seconds
    per_day = 86400 // bs
    head = config.days * per_day
    buckets = [parse_bucket_label(lbl) for lbl in config.labels]
    markets, regs, fills = [], [], []
    tokens = []
    for k, spec in enumerate(buckets):
        cond = _hex(rng, 32)
        yes, no = str(int(rng.integers(1, 2**62))), str(int(rng.integers(1, 2**62)))
        title = f"Will February CPI MoM be {spec.label}?"
        meta = MarketMetadata(slug=f"cpi-bucket-{k}", title=title, description=title,
                              created_at=start, end_date=start + timedelta(days=config.days),
                              category="Economics", tags=("Economics", "CPI"),
                              event_slug=config.event_slug, series_slug="cpi-mom")
        markets.append((0, MarketRecord(cond, CPI_ORACLE, yes, no, meta, gamma_id=str(900000 + k),
                                        question_id=_hex(rng, 32), clob_token_ids=(yes, no))))
        regs.append(TokenRegistration(yes, no, cond, Exchange.NEGRISK, 0, _hex(rng, 32), k))
        tokens.append((yes, no))
    wallets = [_hex(rng, 20) for _ in range(16)]
    truth_mu = {}
    used = set()
    for day in range(config.days):
        mu = config.mu_on(day)
        truth_mu[format_ts(start + timedelta(days=day + 1))] = mu
        masses = partition_masses(mu, config.sigma, buckets)
        for (yes, no), mass in zip(tokens, masses):
            units = int(round(mass * BASE_UNIT))
            if not 0 < units < BASE_UNIT:
                continue
            for _ in range(config.trades_per_day):
                # strictly inside the day so the window (t - 24h, t] holds one day
                blk = day * per_day + int(rng.integers(1, per_day))
                while blk in used:
                    blk = day * per_day + int(rng.integers(1, per_day))
                used.add(blk)
                n_tokens = int(rng.integers(1, 200))
                is_yes = rng.random() < 0.7
                price_units = units if is_yes else BASE_UNIT - units
                collateral = price_units * n_tokens
                token_units = n_tokens * BASE_UNIT
                side = Side.BUY if rng.random() < 0.5 else Side.SELL
                ma, ta = (collateral, token_units) if side is Side.BUY else (token_units, collateral)
                fills.append(FillRecord.from_amounts(
                    _hex(rng, 32), 0, blk, wallets[int(rng.integers(16))], wallets[int(rng.integers(16))],
                    yes if is_yes else no, ma, ta, 0, Exchange.NEGRISK, side))
    truth = {"mu": truth_mu, "sigma": config.sigma, "labels": list(config.labels),
             "event_slug": config.event_slug}
    return Universe(start_time=start, block_seconds=bs, head=head, markets=markets,
                    fills=fills, registrations=regs, truth=truth)
