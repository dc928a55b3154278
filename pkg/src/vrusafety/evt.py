"""Crash-risk estimation from conflict severities with a Lomax tail model.

Each encounter contributes one severity value ``c`` (its minimum TTAC). For
a threshold ``u`` the conflicts are the encounters with ``c < u``; their
exceedances ``x = u - c`` are modelled as Lomax with survival
``(1 + x/u)**(-k)`` so that the conditional probability of reaching
``c <= 0`` (a crash) is ``2**(-k)``.

The shape ``k`` is estimated by single-parameter estimation (SPE): a
zero-intercept regression of the log empirical survival on
``log(1 + x/u)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateDataError,
    InsufficientConflictsError,
    UnknownThresholdError,
)

N_MIN = 3
U_START = 3.0
U_STEP = 0.05
U_FLOOR = 0.5
REL_TOL = 0.05
ZONE_WIDTH = 0.25


@dataclass(frozen=True)
class ConflictSet:
    values: tuple[float, ...]
    observation_seconds: float

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if any(not v >= 0 for v in vals):
            raise ValueError("conflict severities must be >= 0")
        if not self.observation_seconds > 0:
            raise ValueError("observation_seconds must be positive")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def scaled(self, factor: float) -> ConflictSet:
        return ConflictSet(tuple(v * factor for v in self.values), self.observation_seconds)


@dataclass(frozen=True)
class ThresholdSweepPoint:
    u: float
    n: int
    k: float | None
    p_crash: float | None
    inc_t: float | None

    @property
    def fittable(self) -> bool:
        return self.k is not None


@dataclass(frozen=True)
class ThresholdSelection:
    point: ThresholdSweepPoint
    mode: str  # "auto" | "manual"
    degenerate: bool = False
    stable_zone: tuple[ThresholdSweepPoint, ...] = field(default=())


@dataclass(frozen=True)
class RiskEstimate:
    chosen_u: float
    k: float
    n: int
    p_crash: float
    inc_t: float
    observation_seconds: float
    horizon_seconds: float
    inc_T: float

    def as_dict(self) -> dict:
        return {
            "chosen_u": self.chosen_u,
            "k": self.k,
            "n": self.n,
            "p_crash": self.p_crash,
            "inc_t": self.inc_t,
            "horizon_seconds": self.horizon_seconds,
            "inc_T": self.inc_T,
        }


def exceedances(conflicts: ConflictSet | Iterable[float], u: float) -> np.ndarray:
    """Ascending exceedances ``u - c`` of every severity strictly below ``u``."""
    if not u > 0:
        raise ValueError("threshold u must be positive")
    values = conflicts.values if isinstance(conflicts, ConflictSet) else tuple(conflicts)
    c = np.asarray(values, dtype=float)
    return np.sort(u - c[c < u])


def fit_lomax_spe(x: Sequence[float], u: float, n_min: int = N_MIN) -> float:
    """Lomax shape by single-parameter estimation.

    ``x`` are the exceedances over ``u`` (sorted internally). The i-th
    smallest exceedance is paired with the plotting position
    ``(i - 0.5)/n``, and ``k`` is the least-squares slope through the origin
    of ``-log(1 - (i - 0.5)/n)`` against ``log(1 + x_(i)/u)``.

    Crash records enter as ``x = u``.
    """
    if not u > 0:
        raise ValueError("threshold u must be positive")
    xs = np.sort(np.asarray(x, dtype=float))
    n = len(xs)
    if n < n_min:
        raise InsufficientConflictsError(f"{n} conflicts below u={u:g}; at least {n_min} needed")
    if np.any(xs < 0):
        raise ValueError("exceedances must be non-negative")
    z = np.log1p(xs / u)
    denom = float(np.dot(z, z))
    if denom == 0.0:
        raise DegenerateDataError(f"all exceedances are zero at u={u:g}")
    log_surv = np.log1p(-(np.arange(1, n + 1) - 0.5) / n)
    return max(0.0, -float(np.dot(log_surv, z)) / denom)


def crash_probability(k: float) -> float:
    if k < 0:
        raise ValueError("k must be non-negative")
    return 2.0 ** (-k)


def expected_crashes(n: int, k: float) -> float:
    if n < 0:
        raise ValueError("n must be non-negative")
    return n * crash_probability(k)


def scale_horizon(inc_t: float, t: float, T: float) -> float:
    """Extrapolate expected crashes from observation period ``t`` to horizon ``T``."""
    if not (t > 0 and T > 0):
        raise ValueError("t and T must be positive")
    return inc_t * T / t


def sweep_thresholds(u_start: float = U_START, u_step: float = U_STEP, u_floor: float = U_FLOOR) -> list[float]:
    if not (u_start > u_floor > 0):
        raise ValueError("need u_start > u_floor > 0")
    if not u_step > 0:
        raise ValueError("u_step must be positive")
    out = []
    i = 0
    while True:
        # rounding keeps grid values like 1.6 exact instead of 1.5999999999999996
        u = round(u_start - i * u_step, 10)
        if u < u_floor - 1e-12:
            break
        out.append(u)
        i += 1
    return out


def sweep_point(conflicts: ConflictSet, u: float, n_min: int = N_MIN) -> ThresholdSweepPoint:
    x = exceedances(conflicts, u)
    try:
        k = fit_lomax_spe(x, u, n_min=n_min)
    except (InsufficientConflictsError, DegenerateDataError):
        return ThresholdSweepPoint(u=u, n=len(x), k=None, p_crash=None, inc_t=None)
    p = crash_probability(k)
    return ThresholdSweepPoint(u=u, n=len(x), k=k, p_crash=p, inc_t=len(x) * p)


def threshold_sweep(
    conflicts: ConflictSet,
    u_start: float = U_START,
    u_step: float = U_STEP,
    u_floor: float = U_FLOOR,
    n_min: int = N_MIN,
) -> list[ThresholdSweepPoint]:
    """Fit at every threshold from ``u_start`` down to ``u_floor`` (descending u)."""
    return [sweep_point(conflicts, u, n_min) for u in sweep_thresholds(u_start, u_step, u_floor)]


def select_threshold(
    sweep: Sequence[ThresholdSweepPoint],
    mode: str = "auto",
    manual_u: float | None = None,
    rel_tol: float = REL_TOL,
    zone_width: float = ZONE_WIDTH,
) -> ThresholdSelection:
    """Pick the operating threshold from a sweep.

    ``auto`` returns the largest u whose crash probability is within
    ``1 + rel_tol`` of the smallest fitted probability. ``manual`` returns
    the sweep point at ``manual_u``.

    ``stable_zone`` holds the fitted points in ``[u - zone_width, u]``
    below the chosen threshold. The selection is flagged ``degenerate`` when
    the chosen point is the lowest fittable threshold, i.e. nothing below it
    could confirm a plateau.
    """
    fittable = [p for p in sweep if p.fittable]
    if not fittable:
        raise InsufficientConflictsError("no threshold in the sweep has enough conflicts to fit")
    if mode == "manual":
        if manual_u is None:
            raise ValueError("manual mode needs manual_u")
        matches = [p for p in sweep if math.isclose(p.u, manual_u, abs_tol=1e-9)]
        if not matches:
            raise UnknownThresholdError(f"u={manual_u:g} is not on the sweep grid")
        chosen = matches[0]
        if not chosen.fittable:
            raise InsufficientConflictsError(f"u={manual_u:g} has only {chosen.n} conflicts")
    elif mode == "auto":
        p_min = min(p.p_crash for p in fittable)
        chosen = max((p for p in fittable if p.p_crash <= (1 + rel_tol) * p_min), key=lambda p: p.u)
    else:
        raise ValueError(f"unknown selection mode {mode!r}")

    zone = tuple(
        sorted(
            (p for p in fittable if chosen.u - zone_width - 1e-9 <= p.u <= chosen.u + 1e-9),
            key=lambda p: -p.u,
        )
    )
    degenerate = chosen.u == min(p.u for p in fittable)
    return ThresholdSelection(point=chosen, mode=mode, degenerate=degenerate, stable_zone=zone)


def risk_estimate(point: ThresholdSweepPoint, observation_seconds: float, horizon_seconds: float) -> RiskEstimate:
    if not point.fittable:
        raise InsufficientConflictsError(f"u={point.u:g} is not fittable")
    return RiskEstimate(
        chosen_u=point.u,
        k=point.k,
        n=point.n,
        p_crash=point.p_crash,
        inc_t=point.inc_t,
        observation_seconds=observation_seconds,
        horizon_seconds=horizon_seconds,
        inc_T=scale_horizon(point.inc_t, observation_seconds, horizon_seconds),
    )


def generate_synthetic_conflicts(
    k_true: float,
    u_true: float,
    n: int,
    seed: int | np.random.Generator | None = None,
    observation_seconds: float = 3600.0,
) -> ConflictSet:
    """Draw ``n`` conflicts whose exceedances over ``u_true`` are Lomax(k_true).

    Exceedances come from inverse-CDF sampling ``x = u((1-U)^(-1/k) - 1)``;
    draws with ``x >= u_true`` become crashes (``c = 0``).
    """
    if not (k_true > 0 and u_true > 0 and n >= 1):
        raise ValueError("need k_true > 0, u_true > 0, n >= 1")
    rng = np.random.default_rng(seed)
    U = rng.random(n)
    x = u_true * np.expm1(-np.log1p(-U) / k_true)
    c = np.clip(u_true - x, 0.0, None)
    return ConflictSet(tuple(c), observation_seconds)
