"""Spatial-behaviour analyses: volumes, speed profiles and the hypothesis tests.

The statistical tests are small and self-contained on purpose: they are
checked against brute-force oracles in the test-suite, so each one keeps its
convention (which U is reported, how discordant cells are read) explicit in
the code rather than delegating to a library default.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats
from shapely.geometry import Point, Polygon

from .errors import InsufficientDataError, UndefinedTestError
from .surrogate import VEHICLE_FIRST, VRU_FIRST, Encounter
from .trajectory import CrossSection, CrossingEvent, Dataset, Kinematics, UserClass, cross_section_events

MOTOR_VEHICLE = "motor_vehicle"
VRU_GROUP = "vru"
MS_TO_KMH = 3.6
PET_CUTOFF = 5.0
INTERACTION_TTAC_CUTOFF = 4.0
MW_EXACT_MAX = 20
ORDERS = (VEHICLE_FIRST, VRU_FIRST)


@dataclass(frozen=True)
class VolumeRow:
    section: str
    direction: str
    group: str
    count: int
    rate_per_hour: float


@dataclass(frozen=True)
class VolumeTable:
    rows: tuple[VolumeRow, ...]
    observation_seconds: float

    def get(self, section: str, direction: str, group: str) -> VolumeRow:
        for r in self.rows:
            if (r.section, r.direction, r.group) == (section, direction, group):
                return r
        raise KeyError((section, direction, group))

    def total(self, section: str, group: str) -> float:
        return sum(r.rate_per_hour for r in self.rows if r.section == section and r.group == group)


@dataclass(frozen=True)
class SpeedProfile:
    section: str
    direction: str
    speeds_kmh: tuple[float, ...]
    mean: float | None
    ci_low: float | None
    ci_high: float | None

    @property
    def n(self) -> int:
        return len(self.speeds_kmh)

    @property
    def empty(self) -> bool:
        return not self.speeds_kmh


@dataclass(frozen=True)
class TestResult:
    test_name: str
    statistic: float
    p_value: float
    effect_size: float | None = None
    n: tuple[int, ...] | int | None = None
    method: str | None = None
    flags: tuple[str, ...] = ()

    __test__ = False  # keep pytest from collecting this class

    def as_dict(self) -> dict:
        d = {
            "test_name": self.test_name,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "effect_size": self.effect_size,
            "n": list(self.n) if isinstance(self.n, tuple) else self.n,
        }
        if self.method:
            d["method"] = self.method
        if self.flags:
            d["flags"] = list(self.flags)
        return d


@dataclass(frozen=True)
class YieldRatio:
    yields: int
    total: int

    @property
    def ratio(self) -> float | None:
        return self.yields / self.total if self.total else None


@dataclass(frozen=True)
class EncroachmentTable:
    """2x2 counts, rows = forecast order, columns = observed order."""

    counts: tuple[tuple[int, int], tuple[int, int]]

    @property
    def total(self) -> int:
        return sum(map(sum, self.counts))

    @property
    def discordant(self) -> tuple[int, int]:
        return self.counts[0][1], self.counts[1][0]

    def as_dict(self) -> dict:
        return {
            "rows": "forecast", "cols": "observed", "order": list(ORDERS),
            "counts": [list(r) for r in self.counts],
        }


# ---------------------------------------------------------------------------
# volumes and speeds
# ---------------------------------------------------------------------------

def _group(user_class: UserClass) -> str:
    return MOTOR_VEHICLE if user_class is UserClass.MOTOR_VEHICLE else VRU_GROUP


def volumes(
    dataset: Dataset,
    sections: Sequence[CrossSection],
    kinematics_by_id: Mapping[str, Kinematics] | None = None,
) -> VolumeTable:
    """Hourly crossing volumes per section, direction and user group.

    Each trajectory counts at most once per section and direction;
    pedestrians and bicyclists are pooled into one VRU group.
    """
    hours = dataset.observation_seconds / 3600.0
    rows = []
    for sec in sections:
        events = cross_section_events(dataset, sec, kinematics_by_id=kinematics_by_id, dedupe=True)
        counts = Counter((e.direction, _group(dataset.trajectories[e.trajectory_id].user_class)) for e in events)
        for direction, group in product(sec.direction_labels, (MOTOR_VEHICLE, VRU_GROUP)):
            c = counts.get((direction, group), 0)
            rows.append(VolumeRow(sec.code, direction, group, c, c / hours))
    return VolumeTable(tuple(rows), dataset.observation_seconds)


def mean_ci(values: Sequence[float], z: float = 1.96) -> tuple[float | None, float | None, float | None]:
    """Mean and normal-theory 95% CI of the mean (CI needs n >= 2)."""
    n = len(values)
    if n == 0:
        return None, None, None
    a = np.asarray(values, float)
    m = float(a.mean())
    if n < 2:
        return m, None, None
    half = z * float(a.std(ddof=1)) / math.sqrt(n)
    return m, m - half, m + half


def speed_profile_from_speeds(section: str, direction: str, speeds_kmh: Sequence[float]) -> SpeedProfile:
    m, lo, hi = mean_ci(speeds_kmh)
    return SpeedProfile(section, direction, tuple(float(s) for s in speeds_kmh), m, lo, hi)


def speed_profiles(
    dataset: Dataset,
    sections: Sequence[CrossSection],
    kinematics_by_id: Mapping[str, Kinematics] | None = None,
) -> dict[tuple[str, str], SpeedProfile]:
    """Motor-vehicle crossing speeds (km/h) per section and direction."""
    out = {}
    for sec in sections:
        events = cross_section_events(dataset, sec, kinematics_by_id=kinematics_by_id, dedupe=True)
        events = [e for e in events if dataset.trajectories[e.trajectory_id].user_class is UserClass.MOTOR_VEHICLE]
        for direction in sec.direction_labels:
            speeds = [e.speed * MS_TO_KMH for e in events if e.direction == direction]
            out[(sec.code, direction)] = speed_profile_from_speeds(sec.code, direction, speeds)
    return out


def vehicle_crossings(
    dataset: Dataset,
    sections: Sequence[CrossSection],
    kinematics_by_id: Mapping[str, Kinematics] | None = None,
) -> list[CrossingEvent]:
    out = []
    for sec in sections:
        out += [
            e for e in cross_section_events(dataset, sec, kinematics_by_id=kinematics_by_id, dedupe=True)
            if dataset.trajectories[e.trajectory_id].user_class is UserClass.MOTOR_VEHICLE
        ]
    return out


# ---------------------------------------------------------------------------
# Mann-Whitney U
# ---------------------------------------------------------------------------

def _doubled_midranks(values: np.ndarray) -> np.ndarray:
    """2 * midrank of every value (integers, so ties stay exact)."""
    return np.rint(2 * stats.rankdata(values, method="average")).astype(np.int64)


def _subset_sum_counts(weights: np.ndarray, size: int) -> np.ndarray:
    """Number of ``size``-subsets of ``weights`` attaining each total.

    Row ``j`` of the DP table counts subsets of size ``j``; floats keep the
    huge binomial counts representable.
    """
    total = int(weights.sum())
    table = np.zeros((size + 1, total + 1))
    table[0, 0] = 1.0
    for w in weights:
        w = int(w)
        table[1:, w:] += table[:-1, : total + 1 - w].copy()
    return table[size]


def mann_whitney_u(
    sample_before: Sequence[float],
    sample_after: Sequence[float],
    exact_max: int = MW_EXACT_MAX,
) -> TestResult:
    """Two-sided Mann-Whitney U test with rank-biserial effect size.

    The reported statistic is the Before sample's U (pairs where Before is
    larger, ties counted 1/2), and ``effect_size = 2U/(n1 n2) - 1`` so that
    positive values mean Before tends to be larger. The p-value is exact
    (permutation distribution of midrank sums) when ``min(n1, n2) <=
    exact_max``, otherwise the tie-corrected normal approximation with a 0.5
    continuity correction.
    """
    x = np.asarray(sample_before, float)
    y = np.asarray(sample_after, float)
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise InsufficientDataError("Mann-Whitney U needs two non-empty samples")
    pooled = np.concatenate([x, y])
    r2 = _doubled_midranks(pooled)
    u2_before = int(r2[:n1].sum()) - n1 * (n1 + 1)  # 2U, exact integer
    u_before = u2_before / 2
    nn = n1 * n2
    effect = (u2_before - nn) / nn  # integer numerator keeps r(x, y) == -r(y, x) exact

    if min(n1, n2) <= exact_max:
        small = n1 if n1 <= n2 else n2
        counts = _subset_sum_counts(r2, small)
        sums = np.arange(len(counts))
        u2 = sums - small * (small + 1)  # 2U of the smaller sample for every attainable rank sum
        dev_obs = abs(u2_before - nn)
        extreme = np.abs(u2 - nn) >= dev_obs
        p = float(counts[extreme].sum() / counts.sum())
        method = "exact"
    else:
        N = n1 + n2
        _, t = np.unique(pooled, return_counts=True)
        tie_term = float(np.sum(t**3 - t)) / (N * (N - 1))
        var = nn / 12.0 * ((N + 1) - tie_term)
        if var <= 0:
            p = 1.0
        else:
            z = max(abs(u_before - nn / 2) - 0.5, 0.0) / math.sqrt(var)
            p = float(2 * stats.norm.sf(z))
        method = "normal"
    return TestResult("mann_whitney_u", u_before, min(1.0, max(0.0, p)), effect, (n1, n2), method)


# ---------------------------------------------------------------------------
# yield behaviour
# ---------------------------------------------------------------------------

def in_region(point, region) -> bool:
    if region is None:
        return True
    poly = region if isinstance(region, Polygon) else Polygon(region)
    return poly.covers(Point(point))


def yield_ratio(
    encounters: Iterable[Encounter],
    pet_cutoff: float = PET_CUTOFF,
    region=None,
) -> YieldRatio:
    """Share of encounters (PET below ``pet_cutoff``) where the vehicle arrived after the VRU.

    ``region`` optionally restricts to encroachment points inside a polygon
    (sequence of vertices or a shapely polygon).
    """
    poly = None if region is None else (region if isinstance(region, Polygon) else Polygon(region))
    yields = total = 0
    for e in encounters:
        if e.pet is None or not e.pet < pet_cutoff:
            continue
        if poly is not None and not poly.covers(Point(e.encroachment_point)):
            continue
        total += 1
        yields += e.observed_order == VRU_FIRST
    return YieldRatio(yields, total)


def chi_squared_2x2(table, yates: bool = False) -> TestResult:
    """Pearson chi-squared test of independence on a 2x2 table (1 df)."""
    obs = np.asarray(table, dtype=float)
    if obs.shape != (2, 2) or np.any(obs < 0):
        raise ValueError("expected a 2x2 table of non-negative counts")
    rows, cols, n = obs.sum(axis=1), obs.sum(axis=0), obs.sum()
    if np.any(rows == 0) or np.any(cols == 0):
        raise UndefinedTestError("chi-squared undefined: a table margin is zero")
    expected = np.outer(rows, cols) / n
    dev = np.abs(obs - expected)
    if yates:
        dev = np.maximum(dev - 0.5, 0.0)
    chi2 = float(np.sum(dev**2 / expected))
    p = float(stats.chi2.sf(chi2, df=1))
    return TestResult("chi_squared" + ("_yates" if yates else ""), chi2, p, None, int(n), "pearson")


def yield_test(before: YieldRatio, after: YieldRatio, yates: bool = False) -> TestResult:
    table = [
        [before.yields, before.total - before.yields],
        [after.yields, after.total - after.yields],
    ]
    return chi_squared_2x2(table, yates=yates)


# ---------------------------------------------------------------------------
# forecast vs observed encroachment order
# ---------------------------------------------------------------------------

def encroachment_table(encounters: Iterable[Encounter], ttac_cutoff: float = INTERACTION_TTAC_CUTOFF) -> EncroachmentTable:
    """Forecast order (at minimum TTAC) versus observed order for notable interactions."""
    counts = [[0, 0], [0, 0]]
    for e in encounters:
        if e.min_ttac is None or not e.min_ttac < ttac_cutoff or e.observed_order is None:
            continue
        counts[ORDERS.index(e.forecast_order_at_min)][ORDERS.index(e.observed_order)] += 1
    return EncroachmentTable((tuple(counts[0]), tuple(counts[1])))


def mcnemar_midp(table, asymptotic: bool = False) -> TestResult:
    """McNemar test on the discordant cells ``b = table[0][1]``, ``c = table[1][0]``.

    Default is the mid-p exact version: with ``m = b + c`` and
    ``M = max(b, c)``, ``p = 2 P(X > M) + P(X = M)`` for ``X ~ Bin(m, 1/2)``,
    capped at 1. ``asymptotic`` switches to the chi-squared statistic
    ``(b - c)^2 / (b + c)``.
    """
    counts = table.counts if isinstance(table, EncroachmentTable) else table
    b, c = int(counts[0][1]), int(counts[1][0])
    m = b + c
    n = int(sum(map(sum, counts)))
    if m == 0:
        return TestResult("mcnemar_midp", 0.0, 1.0, None, n, "mid-p", ("zero_discordance",))
    if asymptotic:
        chi2 = (b - c) ** 2 / m
        return TestResult("mcnemar_chi2", float(chi2), float(stats.chi2.sf(chi2, 1)), None, n, "asymptotic")
    hi = max(b, c)
    p = 2 * stats.binom.sf(hi, m, 0.5) + stats.binom.pmf(hi, m, 0.5)
    return TestResult("mcnemar_midp", float(hi), float(min(1.0, p)), None, n, "mid-p")
