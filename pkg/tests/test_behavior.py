from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from vrusafety.behavior import (
    MOTOR_VEHICLE,
    VRU_GROUP,
    EncroachmentTable,
    YieldRatio,
    chi_squared_2x2,
    encroachment_table,
    mann_whitney_u,
    mcnemar_midp,
    mean_ci,
    speed_profile_from_speeds,
    speed_profiles,
    volumes,
    yield_ratio,
    yield_test,
)
from vrusafety.errors import InsufficientDataError, UndefinedTestError
from vrusafety.surrogate import VEHICLE_FIRST, VRU_FIRST, Encounter
from vrusafety.trajectory import CrossSection, Dataset, Trajectory, UserClass

# cross(section_dir, movement) > 0 for eastward motion with this endpoint order
SECTION = CrossSection("S1", ((0.0, 5.0), (0.0, -5.0)), "eastbound", "westbound")


def _car(tid, y=0.0, v=10.0, start=0, east=True):
    frames = np.arange(start, start + 100)
    x = (frames - start) * v / 25.0 - 20.0
    xy = np.column_stack([x if east else -x, np.full(100, y)])
    return Trajectory(tid, UserClass.MOTOR_VEHICLE, frames, xy, (4.4, 1.8))


# volumes ----------------------------------------------------------------------

def test_volumes_rate_arithmetic():
    cars = [_car(f"c{i}", start=60 * i) for i in range(10)]
    ds = Dataset("before", 25.0, {t.id: t for t in cars}, 1800.0)
    table = volumes(ds, [SECTION])
    row = table.get("S1", "eastbound", MOTOR_VEHICLE)
    assert row.count == 10 and row.rate_per_hour == pytest.approx(20.0)
    assert table.get("S1", "westbound", VRU_GROUP).count == 0


def test_volumes_empty_dataset():
    table = volumes(Dataset("before", 25.0, {}, 600.0), [SECTION])
    assert len(table.rows) == 4 and all(r.count == 0 for r in table.rows)


def test_volumes_pool_vrus():
    frames = np.arange(40)
    ped = Trajectory("p", UserClass.PEDESTRIAN, frames, np.column_stack([1.0 - frames * 0.05, np.zeros(40)]), None)
    bike = Trajectory("b", UserClass.BICYCLIST, frames, np.column_stack([-1.0 + frames * 0.2, np.zeros(40)]), None)
    ds = Dataset("before", 25.0, {"p": ped, "b": bike}, 3600.0)
    table = volumes(ds, [SECTION])
    assert table.get("S1", "westbound", VRU_GROUP).count == 1
    assert table.get("S1", "eastbound", VRU_GROUP).count == 1


# speeds ------------------------------------------------------------------------

def test_speed_profile_examples():
    one = speed_profile_from_speeds("S1", "eastbound", [30.0])
    assert one.mean == 30.0 and one.ci_low is None and one.ci_high is None
    assert speed_profile_from_speeds("S1", "eastbound", [20.0, 30.0]).mean == 25.0
    empty = speed_profile_from_speeds("S1", "eastbound", [])
    assert empty.empty and empty.mean is None


def test_gaussian_ci_half_width():
    speeds = np.random.default_rng(5).normal(26, 3, 100)
    m, lo, hi = mean_ci(speeds)
    assert (hi - lo) / 2 == pytest.approx(1.96 * 3 / 10, rel=0.2)
    assert lo < m < hi


def test_speed_profiles_from_tracks():
    ds = Dataset("before", 25.0, {"c": _car("c", v=10.0)}, 600.0)
    prof = speed_profiles(ds, [SECTION])
    assert prof[("S1", "eastbound")].mean == pytest.approx(36.0, rel=1e-6)
    assert prof[("S1", "westbound")].empty


# Mann-Whitney ---------------------------------------------------------------------

def test_mwu_examples():
    same = mann_whitney_u([1, 2, 3], [1, 2, 3])
    assert same.effect_size == 0 and same.p_value == pytest.approx(1.0)
    sep = mann_whitney_u([1, 2, 3], [10, 20, 30])
    assert sep.effect_size == -1 and sep.p_value == pytest.approx(0.1)
    assert sep.method == "exact"
    with pytest.raises(InsufficientDataError):
        mann_whitney_u([], [1.0])


def _brute_p(x, y):
    pooled = np.concatenate([x, y])
    ranks = stats.rankdata(pooled)
    n1, nn = len(x), len(x) * len(y)
    u_obs = ranks[:n1].sum() - n1 * (n1 + 1) / 2
    hits = total = 0
    for idx in itertools.combinations(range(len(pooled)), n1):
        u = ranks[list(idx)].sum() - n1 * (n1 + 1) / 2
        total += 1
        hits += abs(u - nn / 2) >= abs(u_obs - nn / 2) - 1e-9
    return hits / total


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_mwu_exact_matches_enumeration(n1, n2, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.integers(0, 6, n1).astype(float), rng.integers(0, 6, n2).astype(float)
    res = mann_whitney_u(x, y)
    assert res.p_value == pytest.approx(_brute_p(x, y), abs=1e-12)
    assert mann_whitney_u(y, x).effect_size == -res.effect_size


def test_mwu_normal_matches_scipy():
    rng = np.random.default_rng(2)
    x, y = rng.normal(30, 3, 40).round(), rng.normal(28, 3, 35).round()
    res = mann_whitney_u(x, y)
    ref = stats.mannwhitneyu(x, y, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert res.method == "normal"
    assert res.statistic == ref.statistic
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)


# yield --------------------------------------------------------------------------------

def _enc(pet, order, point=(0.0, 0.0), ttac=None, forecast=None):
    return Encounter("v", "p", (0, 1), (), ttac, None, None, forecast, pet, order, point)


def test_yield_ratio_cutoff_and_region():
    encs = [
        _enc(1.0, VRU_FIRST), _enc(2.0, VEHICLE_FIRST), _enc(4.99, VRU_FIRST),
        _enc(5.0, VRU_FIRST), _enc(None, None), _enc(1.0, VRU_FIRST, point=(50, 50)),
    ]
    y = yield_ratio(encs)
    assert (y.yields, y.total) == (3, 4)
    boxed = yield_ratio(encs, region=[(-1, -1), (1, -1), (1, 1), (-1, 1)])
    assert (boxed.yields, boxed.total) == (2, 3)
    assert YieldRatio(0, 0).ratio is None


def test_chi_squared_examples():
    res = chi_squared_2x2([[40, 20], [20, 40]])
    assert res.statistic == pytest.approx(40 / 3)
    same = chi_squared_2x2([[10, 20], [10, 20]])
    assert same.statistic == 0 and same.p_value == 1
    with pytest.raises(UndefinedTestError):
        chi_squared_2x2([[0, 0], [3, 4]])


def test_chi_squared_matches_scipy_and_swaps():
    t = [[94, 159], [104, 145]]
    res = yield_test(YieldRatio(94, 253), YieldRatio(104, 249))
    ref = stats.chi2_contingency(t, correction=False)
    assert res.statistic == pytest.approx(ref.statistic) and res.p_value == pytest.approx(ref.pvalue)
    assert res.p_value > 0.05
    assert chi_squared_2x2([t[1], t[0]]).statistic == pytest.approx(res.statistic)
    assert chi_squared_2x2(np.transpose(t)).statistic == pytest.approx(res.statistic)
    yates = chi_squared_2x2(t, yates=True)
    assert yates.statistic == pytest.approx(stats.chi2_contingency(t, correction=True).statistic)


# McNemar -------------------------------------------------------------------------------

def test_mcnemar_examples():
    assert mcnemar_midp([[17, 3], [0, 13]]).p_value == pytest.approx(0.125)
    assert mcnemar_midp([[17, 7], [1, 10]]).p_value == pytest.approx(10 / 256)
    assert mcnemar_midp([[0, 5], [5, 0]]).p_value == 1.0
    zero = mcnemar_midp([[4, 0], [0, 6]])
    assert zero.p_value == 1.0 and "zero_discordance" in zero.flags


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 30), st.integers(0, 30))
def test_mcnemar_symmetric_and_bounded(b, c):
    p = mcnemar_midp([[1, b], [c, 1]]).p_value
    assert p == mcnemar_midp([[1, c], [b, 1]]).p_value
    assert 0 < p <= 1


def test_mcnemar_asymptotic():
    res = mcnemar_midp([[17, 7], [1, 10]], asymptotic=True)
    assert res.statistic == pytest.approx(36 / 8)


def test_encroachment_table_counts_interactions():
    encs = [
        _enc(1.0, VRU_FIRST, ttac=2.0, forecast=VEHICLE_FIRST),
        _enc(1.0, VEHICLE_FIRST, ttac=3.9, forecast=VEHICLE_FIRST),
        _enc(1.0, VRU_FIRST, ttac=4.0, forecast=VRU_FIRST),  # not below the cutoff
        _enc(None, None, ttac=1.0, forecast=VRU_FIRST),  # no observed order
    ]
    tab = encroachment_table(encs)
    assert tab == EncroachmentTable(((1, 1), (0, 0)))
    assert tab.discordant == (1, 0) and tab.total == 2
