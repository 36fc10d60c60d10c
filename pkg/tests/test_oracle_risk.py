from __future__ import annotations

from datetime import timedelta

import pytest
from hypothesis import given, settings, strategies as st

from pmlife.analytics.oracle_risk import (AnchorKind, RiskAnchor, continued_betting, oracle_risk_anchor,
                                          post_anchor_histogram, risk_anchors)
from pmlife.model import OracleEventType as E

from builders import at, event, fill, h


def test_anchor_prefers_first_dispute():
    evs = [event(1, E.PROPOSE, at(0)), event(2, E.DISPUTE, at(2)), event(3, E.PROPOSE, at(3)),
           event(4, E.DISPUTE, at(5))]
    assert oracle_risk_anchor(evs) == (at(2), AnchorKind.FIRST_DISPUTE)


def test_anchor_last_propose_without_dispute():
    evs = [event(1, E.PROPOSE, at(0)), event(2, E.PROPOSE, at(4)), event(3, E.SETTLE, at(9))]
    assert oracle_risk_anchor(evs) == (at(4), AnchorKind.LAST_PROPOSE)
    assert oracle_risk_anchor([event(1, E.SETTLE, at(1))]) is None


def test_continued_betting_window_edges():
    mid = h(1)
    assert continued_betting([fill(1, "1", ts=at(2.5), market_id=mid)], at(0)) == (True, 2.5)
    assert continued_betting([fill(1, "1", ts=at(25), market_id=mid)], at(0)) == (False, None)
    assert continued_betting([fill(1, "1", ts=at(24), market_id=mid)], at(0)) == (True, 24.0)
    assert continued_betting([fill(1, "1", ts=at(0), market_id=mid)], at(0)) == (False, None)
    assert continued_betting([fill(1, "1", ts=at(1))], at(0)) == (False, None)


def test_risk_anchors_and_histogram():
    evs = [event(i, E.DISPUTE, at(0), market_id=h(i)) for i in range(3)]
    fills = [fill(10, "1", ts=at(0.5), market_id=h(0)), fill(11, "1", ts=at(0.7), market_id=h(0)),
             fill(12, "1", ts=at(5.2), market_id=h(1)), fill(13, "1", ts=at(30), market_id=h(2))]
    anchors = risk_anchors(evs, fills)
    assert [a.continued_betting for a in anchors] == [True, True, False]
    stats = post_anchor_histogram(anchors, fills)
    assert stats.cohort == 3 and stats.resumed == 2
    assert stats.hourly_trades[0] == 2 and stats.hourly_trades[5] == 1 and sum(stats.hourly_trades) == 3
    assert stats.first_trade_hist[0] == 1 and stats.first_trade_hist[5] == 1
    assert stats.cumulative[-1] == pytest.approx(2 / 3)
    assert stats.share_under_3h == 0.5


def test_empty_histogram():
    stats = post_anchor_histogram([], [])
    assert stats.cohort == 0 and stats.share_under_3h is None and stats.cumulative[-1] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(0.01, 24.0)), min_size=1, max_size=30))
def test_cumulative_monotone_and_bounded(delays):
    anchors = [RiskAnchor(h(i), at(0), AnchorKind.FIRST_DISPUTE, d is not None, d) for i, d in enumerate(delays)]
    stats = post_anchor_histogram(anchors, [])
    cum = stats.cumulative
    assert all(a <= b for a, b in zip(cum, cum[1:]))
    assert cum[-1] == pytest.approx(sum(d is not None for d in delays) / len(delays))
    assert sum(stats.first_trade_hist) == stats.resumed
