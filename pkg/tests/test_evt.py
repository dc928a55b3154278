from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrusafety.errors import DegenerateDataError, InsufficientConflictsError, UnknownThresholdError
from vrusafety.evt import (
    ConflictSet,
    ThresholdSweepPoint,
    crash_probability,
    expected_crashes,
    exceedances,
    fit_lomax_spe,
    generate_synthetic_conflicts,
    risk_estimate,
    scale_horizon,
    select_threshold,
    sweep_point,
    sweep_thresholds,
    threshold_sweep,
)


# exceedances -------------------------------------------------------------------

def test_exceedances_examples():
    c = ConflictSet((0.5, 1.2, 2.0), 3600)
    np.testing.assert_allclose(exceedances(c, 1.6), [0.4, 1.1])
    assert exceedances(c, 0.4).size == 0
    assert 1.6 in exceedances(ConflictSet((0.0, 2.5), 3600), 1.6)


def test_conflict_set_rejects_negative():
    with pytest.raises(ValueError):
        ConflictSet((-0.1,), 10)


# fit -----------------------------------------------------------------------------

def test_fit_single_point_closed_form():
    # n = 1: plotting position 0.5, so k = log 2 / log(1 + x/u)
    x, u = 0.7, 1.6
    assert fit_lomax_spe([x], u, n_min=1) == pytest.approx(np.log(2) / np.log1p(x / u))


def test_fit_errors():
    with pytest.raises(InsufficientConflictsError):
        fit_lomax_spe([0.1, 0.2], 1.0)
    with pytest.raises(DegenerateDataError):
        fit_lomax_spe([0.0, 0.0, 0.0], 1.0)


def test_fit_is_positive_slope():
    k = fit_lomax_spe([0.01, 0.02, 0.05, 0.1], 1.5)
    assert k > 0


# small k0 puts many draws past u, where clipping to crashes censors the tail
@pytest.mark.parametrize("k0", [8.0, 10.0, 15.0])
def test_round_trip_large_n(k0):
    u0 = 1.5
    fits = [
        fit_lomax_spe(exceedances(generate_synthetic_conflicts(k0, u0, 10_000, seed=s), u0), u0)
        for s in range(20)
    ]
    assert abs(np.median(fits) - k0) / k0 < 0.05


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 20), st.integers(0, 10_000))
def test_scale_equivariance(lam, seed):
    c = generate_synthetic_conflicts(8.0, 2.0, 30, seed=seed)
    a = sweep_point(c, 2.0)
    b = sweep_point(c.scaled(lam), 2.0 * lam)
    assert a.n == b.n
    if a.fittable:
        assert b.k == pytest.approx(a.k, rel=1e-9)
        assert b.inc_t == pytest.approx(a.inc_t, rel=1e-9)


# probability and horizon -----------------------------------------------------------

def test_crash_probability_examples():
    assert crash_probability(0) == 1.0
    assert crash_probability(1) == 0.5
    ks = np.linspace(0, 30, 50)
    assert np.all(np.diff([crash_probability(k) for k in ks]) < 0)


def test_expected_crashes_is_n_times_p():
    assert expected_crashes(8, 10.9) == 8 * crash_probability(10.9)
    assert expected_crashes(0, 3.0) == 0.0


def test_scale_horizon():
    assert scale_horizon(0.0043, 1.0, 200.0) == pytest.approx(0.86)
    with pytest.raises(ValueError):
        scale_horizon(1.0, 0.0, 1.0)


# sweep -----------------------------------------------------------------------------

def test_sweep_grid():
    us = sweep_thresholds()
    assert us[0] == 3.0 and us[-1] == 0.5 and len(us) == 51
    assert 1.6 in us and 1.65 in us


def test_sweep_all_above_start_unfittable():
    sweep = threshold_sweep(ConflictSet((3.0, 3.5, 4.0), 100))
    assert all(p.n == 0 and not p.fittable for p in sweep)


def test_sweep_monotone_and_self_consistent():
    c = generate_synthetic_conflicts(6.0, 2.5, 80, seed=3)
    sweep = threshold_sweep(c)
    ns = [p.n for p in sweep]
    assert ns == sorted(ns, reverse=True)
    for p in sweep[::7]:
        assert p == sweep_point(c, p.u)


def test_sweep_k_stable_just_below_generating_threshold():
    # the Lomax scale follows u, so k drifts slowly; stability is checked over one zone width
    c = generate_synthetic_conflicts(10.0, 3.0, 5_000, seed=11)
    ks = [p.k for p in threshold_sweep(c, u_floor=2.75)]
    assert np.std(ks) / np.mean(ks) < 0.10


def test_fit_unclipped_lomax_any_shape():
    for k0 in (2.0, 5.0, 15.0):
        U = np.random.default_rng(int(k0)).random(5_000)
        x = 1.5 * np.expm1(-np.log1p(-U) / k0)
        assert fit_lomax_spe(x, 1.5) == pytest.approx(k0, rel=0.05)


# selection ---------------------------------------------------------------------------

def _pt(u, p, n=10):
    return ThresholdSweepPoint(u, n, -np.log2(p), p, n * p)


def test_select_plateau_example():
    sweep = [_pt(1.70, 0.0012), _pt(1.65, 0.0009), _pt(1.60, 0.00054), _pt(1.55, 0.00055), _pt(1.50, 0.00056)]
    sel = select_threshold(sweep)
    assert sel.point.u == 1.60 and not sel.degenerate
    assert [p.u for p in sel.stable_zone] == [1.60, 1.55, 1.50]


def test_select_single_point():
    sweep = [ThresholdSweepPoint(2.0, 2, None, None, None), _pt(1.9, 0.01)]
    sel = select_threshold(sweep)
    assert sel.point.u == 1.9 and sel.degenerate


def test_select_monotone_is_degenerate():
    sweep = [_pt(u, 0.01 * u) for u in (2.0, 1.9, 1.8, 1.7)]
    sel = select_threshold(sweep)
    assert sel.point.u == 1.7 and sel.degenerate


def test_select_manual_and_errors():
    sweep = [_pt(1.7, 0.001), _pt(1.65, 0.002), ThresholdSweepPoint(1.6, 2, None, None, None)]
    assert select_threshold(sweep, "manual", manual_u=1.65).point.u == 1.65
    with pytest.raises(UnknownThresholdError):
        select_threshold(sweep, "manual", manual_u=1.62)
    with pytest.raises(InsufficientConflictsError):
        select_threshold(sweep, "manual", manual_u=1.6)
    with pytest.raises(InsufficientConflictsError):
        select_threshold([ThresholdSweepPoint(1.6, 0, None, None, None)])


def test_risk_estimate_scales_to_horizon():
    r = risk_estimate(_pt(1.6, 0.001, n=4), 3600.0, 720000.0)
    assert r.inc_T == pytest.approx(0.004 * 200)
    assert set(r.as_dict()) == {"chosen_u", "k", "n", "p_crash", "inc_t", "horizon_seconds", "inc_T"}


# generator -----------------------------------------------------------------------------

def test_generator_deterministic():
    assert generate_synthetic_conflicts(5, 1.5, 100, seed=4) == generate_synthetic_conflicts(5, 1.5, 100, seed=4)


def test_generator_survival_at_u_matches_crash_probability():
    k, u, n = 4.0, 1.5, 100_000
    c = np.asarray(generate_synthetic_conflicts(k, u, n, seed=21).values)
    p = 2.0 ** -k
    assert abs(np.mean(c == 0.0) - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_generator_large_k_concentrates_at_threshold():
    c = np.asarray(generate_synthetic_conflicts(1e6, 2.0, 500, seed=0).values)
    assert np.all(np.abs(c - 2.0) < 1e-4)
