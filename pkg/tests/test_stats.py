from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats as sps

from pmlife.analytics.stats import anova_oneway, kruskal_wallis, midranks, pearson_r
from pmlife.errors import DegenerateInput

floats = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_pearson_examples():
    assert pearson_r([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert pearson_r([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    # cov = 1.5, sx = 1, sy = sqrt(7/3)
    assert pearson_r([1, 2, 3], [1, 2, 4]) == pytest.approx(1.5 / np.sqrt(7 / 3), abs=1e-12)
    assert abs(pearson_r([1, 2, 3], [1, 2, 4]) - 0.9820) < 1e-4


def test_pearson_degenerate():
    with pytest.raises(DegenerateInput):
        pearson_r([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson_r([1], [2])


def test_anova_hand_value():
    res = anova_oneway([[1, 2, 3], [4, 5, 6]])
    assert res.f == 13.5
    assert (res.df_between, res.df_within) == (1, 4)
    assert res.ss_between == 13.5 and res.ss_within == 4.0
    assert res.p_value == pytest.approx(sps.f_oneway([1, 2, 3], [4, 5, 6]).pvalue, rel=1e-10)


def test_anova_identical_groups_and_errors():
    assert anova_oneway([[1, 2, 3], [1, 2, 3]]).f == 0.0
    with pytest.raises(ValueError):
        anova_oneway([[1, 2, 3]])
    with pytest.raises(DegenerateInput):
        anova_oneway([[1, 1], [2, 2]])


def test_kruskal_examples():
    # ranks 1,2 | 3,4: H = 12/(4*5) * (3^2/2 + 7^2/2) - 3*5 = 2.4
    res = kruskal_wallis([[1, 2], [3, 4]])
    assert abs(res.h_uncorrected - 2.4) < 1e-9 and abs(res.h - 2.4) < 1e-9
    assert kruskal_wallis([[1, 2, 3], [1, 2, 3]]).h == pytest.approx(0.0, abs=1e-12)
    assert kruskal_wallis([[5, 5], [5, 5, 5]]).h == 0.0


def test_midranks():
    assert midranks([10, 20, 20, 30]) == [1.0, 2.5, 2.5, 4.0]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.integers(0, 6), min_size=1, max_size=6), min_size=2, max_size=4))
def test_kruskal_matches_scipy(groups):
    flat = [v for g in groups for v in g]
    assume(len(set(flat)) > 1)
    ours = kruskal_wallis(groups)
    ref = sps.kruskal(*groups)
    assert ours.h == pytest.approx(ref.statistic, rel=1e-9, abs=1e-9)
    assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(floats, floats), min_size=3, max_size=20),
       st.floats(0.1, 50), st.floats(-100, 100), st.floats(0.1, 50), st.floats(-100, 100))
def test_pearson_affine_invariance(pairs, a, b, c, d):
    x = [p[0] for p in pairs]
    y = [p[1] for p in pairs]
    assume(np.std(x) > 1e-3 and np.std(y) > 1e-3)
    r = pearson_r(x, y)
    assert pearson_r([a * v + b for v in x], [c * v + d for v in y]) == pytest.approx(r, abs=1e-9)
    assert pearson_r([-a * v + b for v in x], y) == pytest.approx(-r, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(floats, min_size=2, max_size=8), min_size=2, max_size=4),
       st.floats(0.1, 20), st.floats(-100, 100))
def test_anova_affine_invariance(groups, scale, shift):
    flat = [v for g in groups for v in g]
    means = [np.mean(g) for g in groups]
    assume(np.std(flat) > 1e-2 and sum(np.var(g) for g in groups) > 1e-2)
    assume(max(means) - min(means) > 1e-3)
    f = anova_oneway(groups).f
    assert anova_oneway([[v + shift for v in g] for g in groups]).f == pytest.approx(f, rel=1e-7)
    assert anova_oneway([[v * scale for v in g] for g in groups]).f == pytest.approx(f, rel=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(floats, min_size=2, max_size=8), min_size=2, max_size=4))
def test_anova_matches_scipy(groups):
    assume(sum(np.var(g) for g in groups) > 1e-3)
    ref = sps.f_oneway(*groups)
    assume(np.isfinite(ref.statistic))
    assert anova_oneway(groups).f == pytest.approx(ref.statistic, rel=1e-7, abs=1e-9)
