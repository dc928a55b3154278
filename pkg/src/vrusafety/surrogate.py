"""Vehicle-VRU encounters and surrogate safety measures (TTC, TAdv, TTAC, PET).

TTAC is evaluated between the VRU centroid and each of the four corners of
the heading-aligned vehicle rectangle. At every common frame both points are
extrapolated along straight lines at their current velocity; the point where
the two forward rays cross is the conflict point CP. Whoever reaches CP first
is user 1; TAdv is the gap between the arrival times and TTAC is the arrival
time of user 2.

PET is observed rather than predicted: it is the gap between the first user's
footprint leaving the path intersection and the second user's footprint
reaching it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .trajectory import (
    STATIONARY_EPS,
    Dataset,
    Kinematics,
    Trajectory,
    UserClass,
    kinematics,
)

VEHICLE_FIRST = "vehicle_first"
VRU_FIRST = "vru_first"
VEHICLE_POINT = "vehicle_point"
VRU = "vru"

PARALLEL_TOL = 1e-9
GATE_RADIUS = 25.0
MIN_COEXIST_S = 0.5
VRU_RADIUS = {UserClass.PEDESTRIAN: 0.3, UserClass.BICYCLIST: 0.5}

CORNER_NAMES = ("front_left", "front_right", "rear_right", "rear_left")
CENTROID = -1

ENCOUNTER_CSV_HEADER = (
    "vehicle_id", "vru_id", "min_ttac_s", "frame", "x", "y", "pet_s", "forecast_order", "observed_order",
)


@dataclass(frozen=True)
class SurrogateSample:
    frame: int
    corner_index: int
    cp: tuple[float, float]
    d1: float
    d2: float
    v1: float
    v2: float
    t1_prime: float
    t2_prime: float
    tadv: float
    ttac: float
    first_arriver: str


@dataclass(frozen=True)
class EncounterSpan:
    vehicle_id: str
    vru_id: str
    first_frame: int
    last_frame: int
    min_distance: float


@dataclass(frozen=True)
class MinTTAC:
    ttac: float
    frame: int
    location: tuple[float, float]
    forecast_order: str
    corner_index: int
    tadv: float


@dataclass(frozen=True)
class PETResult:
    pet: float
    observed_order: str
    point: tuple[float, float]
    vehicle_interval: tuple[float, float]
    vru_interval: tuple[float, float]


@dataclass(frozen=True)
class Encounter:
    vehicle_id: str
    vru_id: str
    frame_span: tuple[int, int]
    samples: tuple[SurrogateSample, ...]
    min_ttac: float | None
    min_ttac_frame: int | None
    min_ttac_location: tuple[float, float] | None
    forecast_order_at_min: str | None
    pet: float | None
    observed_order: str | None
    encroachment_point: tuple[float, float] | None

    @property
    def has_ttac(self) -> bool:
        return self.min_ttac is not None


# ---------------------------------------------------------------------------
# point-pair geometry
# ---------------------------------------------------------------------------

def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def ray_conflict_point(p1, h1, p2, h2, parallel_tol: float = PARALLEL_TOL):
    """Intersection of the forward rays ``p1 + s*h1`` and ``p2 + r*h2``.

    Returns ``None`` for (near-)parallel headings or when the intersection
    lies behind either origin.
    """
    p1, h1, p2, h2 = (np.asarray(a, dtype=float) for a in (p1, h1, p2, h2))
    denom = _cross(h1, h2)
    if abs(denom) < parallel_tol:
        return None
    d = p2 - p1
    s = _cross(d, h2) / denom
    r = _cross(d, h1) / denom
    if s < 0 or r < 0:
        return None
    return p1 + s * h1


def surrogate_sample(
    p_vehicle,
    v_vehicle,
    p_vru,
    v_vru,
    *,
    frame: int = 0,
    corner_index: int = CENTROID,
    stationary_eps: float = STATIONARY_EPS,
) -> SurrogateSample | None:
    """TAdv/TTAC for one vehicle point and one VRU at a single instant."""
    p_a, v_a, p_b, v_b = (np.asarray(a, dtype=float) for a in (p_vehicle, v_vehicle, p_vru, v_vru))
    s_a, s_b = float(np.hypot(*v_a)), float(np.hypot(*v_b))
    if s_a < stationary_eps or s_b < stationary_eps:
        return None
    cp = ray_conflict_point(p_a, v_a / s_a, p_b, v_b / s_b)
    if cp is None:
        return None
    d_a, d_b = float(np.hypot(*(cp - p_a))), float(np.hypot(*(cp - p_b)))
    t_a, t_b = d_a / s_a, d_b / s_b
    if t_a <= t_b:
        d1, d2, v1, v2, t1, t2, first = d_a, d_b, s_a, s_b, t_a, t_b, VEHICLE_POINT
    else:
        d1, d2, v1, v2, t1, t2, first = d_b, d_a, s_b, s_a, t_b, t_a, VRU
    return SurrogateSample(
        frame=int(frame),
        corner_index=int(corner_index),
        cp=(float(cp[0]), float(cp[1])),
        d1=d1, d2=d2, v1=v1, v2=v2,
        t1_prime=t1, t2_prime=t2,
        tadv=t2 - t1, ttac=t2,
        first_arriver=first,
    )


def ttc(p1, v1, p2, v2, rel_tol: float = 1e-9) -> float | None:
    """Classical time-to-collision of two points, ``None`` off a collision course.

    The points are on a collision course when their relative velocity is
    aligned with (and closing) the line of sight.
    """
    d = np.asarray(p2, float) - np.asarray(p1, float)
    w = np.asarray(v2, float) - np.asarray(v1, float)
    dist, rel = float(np.hypot(*d)), float(np.hypot(*w))
    if dist == 0:
        return 0.0
    if rel == 0 or abs(_cross(d, w)) > rel_tol * dist * rel:
        return None
    closing = -float(np.dot(d, w)) / dist
    return dist / closing if closing > 0 else None


def vehicle_corners(position, heading, footprint: tuple[float, float]) -> np.ndarray:
    """Corners (front-left, front-right, rear-right, rear-left) of the footprint.

    Works on single states (shape ``(2,)``) and on stacks (``(n, 2)``),
    returning ``(4, 2)`` or ``(4, n, 2)`` respectively.
    """
    c = np.asarray(position, float)
    h = np.asarray(heading, float)
    n = np.stack([-h[..., 1], h[..., 0]], axis=-1)
    half_l, half_w = footprint[0] / 2, footprint[1] / 2
    signs = ((1, 1), (1, -1), (-1, -1), (-1, 1))
    return np.stack([c + sl * half_l * h + sw * half_w * n for sl, sw in signs])


# ---------------------------------------------------------------------------
# encounters
# ---------------------------------------------------------------------------

def detect_encounters(
    dataset: Dataset,
    gate_radius: float = GATE_RADIUS,
    min_coexist_s: float = MIN_COEXIST_S,
) -> list[EncounterSpan]:
    """Vehicle-VRU pairs that coexist for ``min_coexist_s`` and come within ``gate_radius``."""
    if not gate_radius > 0:
        raise ValueError("gate_radius must be positive")
    vehicles = dataset.of_class(UserClass.MOTOR_VEHICLE)
    vrus = dataset.of_class(UserClass.PEDESTRIAN, UserClass.BICYCLIST)
    vrus_by_start = sorted(vrus, key=lambda t: t.frames[0])
    starts = np.array([t.frames[0] for t in vrus_by_start])
    max_len = max((t.frames[-1] - t.frames[0] for t in vrus), default=0)
    spans = []
    for veh in vehicles:
        f0, f1 = veh.frames[0], veh.frames[-1]
        lo = np.searchsorted(starts, f0 - max_len, side="left")
        hi = np.searchsorted(starts, f1, side="right")
        for vru in vrus_by_start[lo:hi]:
            if vru.frames[-1] < f0:
                continue
            common, iv, iu = np.intersect1d(veh.frames, vru.frames, assume_unique=True, return_indices=True)
            if len(common) == 0 or (common[-1] - common[0]) / dataset.fps < min_coexist_s:
                continue
            dist = np.hypot(*(veh.xy[iv] - vru.xy[iu]).T)
            dmin = float(dist.min())
            if dmin < gate_radius:
                spans.append(EncounterSpan(veh.id, vru.id, int(common[0]), int(common[-1]), dmin))
    spans.sort(key=lambda s: (s.first_frame, s.vehicle_id, s.vru_id))
    return spans


def ttac_series(
    vehicle: Trajectory,
    vehicle_kin: Kinematics,
    vru: Trajectory,
    vru_kin: Kinematics,
    frame_span: tuple[int, int] | None = None,
    stationary_eps: float = STATIONARY_EPS,
) -> list[SurrogateSample]:
    """TTAC samples for every common frame and every vehicle corner.

    Samples are skipped when either user is (nearly) stationary, when the
    headings are parallel, or when CP lies behind either user (the first
    arriver has already passed it).
    """
    common, iv, iu = np.intersect1d(vehicle_kin.frames, vru_kin.frames, assume_unique=True, return_indices=True)
    if frame_span is not None:
        keep = (common >= frame_span[0]) & (common <= frame_span[1])
        common, iv, iu = common[keep], iv[keep], iu[keep]
    if len(common) == 0:
        return []
    s_a = vehicle_kin.speed[iv]
    s_b = vru_kin.speed[iu]
    moving = (s_a >= stationary_eps) & (s_b >= stationary_eps)
    common, iv, iu, s_a, s_b = common[moving], iv[moving], iu[moving], s_a[moving], s_b[moving]
    if len(common) == 0:
        return []
    v_a = vehicle_kin.velocity[iv]
    v_b = vru_kin.velocity[iu]
    h_a = v_a / s_a[:, None]
    h_b = v_b / s_b[:, None]
    p_b = vru_kin.position[iu]
    corners = vehicle_corners(vehicle_kin.position[iv], h_a, vehicle.footprint)

    denom = _cross(h_a, h_b)
    ok_dir = np.abs(denom) >= PARALLEL_TOL
    safe = np.where(ok_dir, denom, 1.0)
    out: list[SurrogateSample] = []
    for ci in range(4):
        p_a = corners[ci]
        d = p_b - p_a
        s = _cross(d, h_b) / safe  # distance of CP along the vehicle ray
        r = _cross(d, h_a) / safe  # distance of CP along the VRU ray
        valid = ok_dir & (s >= 0) & (r >= 0)
        t_a = s / s_a
        t_b = r / s_b
        for j in np.flatnonzero(valid):
            cp = p_a[j] + s[j] * h_a[j]
            if t_a[j] <= t_b[j]:
                d1, d2, v1, v2, t1, t2, first = s[j], r[j], s_a[j], s_b[j], t_a[j], t_b[j], VEHICLE_POINT
            else:
                d1, d2, v1, v2, t1, t2, first = r[j], s[j], s_b[j], s_a[j], t_b[j], t_a[j], VRU
            out.append(
                SurrogateSample(
                    frame=int(common[j]), corner_index=ci,
                    cp=(float(cp[0]), float(cp[1])),
                    d1=float(d1), d2=float(d2), v1=float(v1), v2=float(v2),
                    t1_prime=float(t1), t2_prime=float(t2),
                    tadv=float(t2 - t1), ttac=float(t2),
                    first_arriver=first,
                )
            )
    out.sort(key=lambda smp: (smp.frame, smp.corner_index))
    return out


def min_ttac(samples: Iterable[SurrogateSample]) -> MinTTAC | None:
    """Lowest TTAC over all frames and corners; ``None`` for an empty series.

    Ties keep the earliest frame, then the lowest corner index.
    """
    best = None
    for smp in samples:
        if best is None or smp.ttac < best.ttac:
            best = smp
    if best is None:
        return None
    return MinTTAC(
        ttac=best.ttac,
        frame=best.frame,
        location=best.cp,
        forecast_order=VEHICLE_FIRST if best.first_arriver == VEHICLE_POINT else VRU_FIRST,
        corner_index=best.corner_index,
        tadv=best.tadv,
    )


# ---------------------------------------------------------------------------
# PET
# ---------------------------------------------------------------------------

def _segment_intersections(P: np.ndarray, Q: np.ndarray, chunk: int = 512):
    """All proper crossings between polylines P and Q.

    Yields ``(i, s, j, r)``: segment ``P[i]->P[i+1]`` at fraction ``s`` meets
    ``Q[j]->Q[j+1]`` at fraction ``r``. Fractions are half-open ``[0, 1)``
    so a crossing through a shared vertex is reported once.
    """
    q0, dq = Q[:-1], np.diff(Q, axis=0)
    pad = 1e-9  # keeps touching boxes when a vertex sits on the other path up to rounding
    q_lo = np.minimum(Q[:-1], Q[1:]) - pad
    q_hi = np.maximum(Q[:-1], Q[1:]) + pad
    n_seg = len(P) - 1
    for start in range(0, n_seg, chunk):
        idx = np.arange(start, min(start + chunk, n_seg))
        p0, p1 = P[idx], P[idx + 1]
        dp = p1 - p0
        p_lo, p_hi = np.minimum(p0, p1), np.maximum(p0, p1)
        bbox = np.all(p_lo[:, None, :] <= q_hi[None, :, :], axis=-1) & np.all(
            q_lo[None, :, :] <= p_hi[:, None, :], axis=-1
        )
        ii, jj = np.nonzero(bbox)
        if len(ii) == 0:
            continue
        a, da, b, db = p0[ii], dp[ii], q0[jj], dq[jj]
        denom = _cross(da, db)
        nz = np.abs(denom) > 1e-15
        safe = np.where(nz, denom, 1.0)
        w = b - a
        s = _cross(w, db) / safe
        r = _cross(w, da) / safe
        # window shifted by eps so a crossing at a shared vertex survives rounding on either side
        eps = 1e-12
        hit = nz & (s >= -eps) & (s < 1 - eps) & (r >= -eps) & (r < 1 - eps)
        for k in np.flatnonzero(hit):
            yield start + int(ii[k]), float(s[k]), int(jj[k]), float(r[k])


class _Motion:
    """Continuous-time state of a tracked user: linear interpolation between frames."""

    def __init__(self, kin: Kinematics, fps: float):
        self.kin = kin
        self.times = kin.frames / fps
        h = np.array(kin.heading, dtype=float)
        # users stationary for the whole track keep a nominal +x heading
        h[np.isnan(h[:, 0])] = (1.0, 0.0)
        self.heading = h

    def state(self, t: float):
        times = self.times
        j = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        a = (t - times[j]) / (times[j + 1] - times[j])
        pos = self.kin.position[j] + a * (self.kin.position[j + 1] - self.kin.position[j])
        h = self.heading[j] + a * (self.heading[j + 1] - self.heading[j])
        norm = math.hypot(h[0], h[1])
        h = h / norm if norm > 1e-12 else self.heading[j]
        return pos, h


def _coverage_interval(margin, t_pass: float, times: np.ndarray) -> tuple[float, float]:
    """Maximal interval around ``t_pass`` where ``margin(t) >= 0``, clipped to the track."""
    if margin(t_pass) < 0:
        return t_pass, t_pass  # point footprint: occupied only at the pass instant
    bounds = []
    for direction in (-1, 1):
        inside = t_pass
        edge = None
        idx = np.searchsorted(times, t_pass, side="left" if direction < 0 else "right")
        candidates = times[:idx][::-1] if direction < 0 else times[idx:]
        for tf in candidates:
            if tf == inside:
                continue
            if margin(tf) >= 0:
                inside = tf
                continue
            lo, hi = (tf, inside) if direction < 0 else (inside, tf)
            edge = brentq(margin, lo, hi, xtol=1e-10)
            break
        bounds.append(inside if edge is None else edge)
    return bounds[0], bounds[1]


def pet(
    vehicle: Trajectory,
    vru: Trajectory,
    fps: float,
    vehicle_kin: Kinematics | None = None,
    vru_kin: Kinematics | None = None,
    vru_radius: float | None = None,
) -> PETResult | None:
    """Post-encroachment time at the first crossing of the two paths.

    The vehicle occupies the point while its heading-aligned rectangle covers
    it, the VRU while its disc of ``vru_radius`` does. When the two occupancy
    intervals overlap the users were there simultaneously and PET is 0.
    Returns ``None`` if the centroid paths never cross.
    """
    vehicle_kin = vehicle_kin or kinematics(vehicle, fps)
    vru_kin = vru_kin or kinematics(vru, fps)
    if vru_radius is None:
        vru_radius = VRU_RADIUS.get(vru.user_class, 0.3)
    P, Q = vehicle_kin.position, vru_kin.position
    best = None
    for i, s, j, r in _segment_intersections(P, Q):
        t_veh = (vehicle_kin.frames[i] + s * (vehicle_kin.frames[i + 1] - vehicle_kin.frames[i])) / fps
        t_vru = (vru_kin.frames[j] + r * (vru_kin.frames[j + 1] - vru_kin.frames[j])) / fps
        key = min(t_veh, t_vru)
        if best is None or key < best[0]:
            best = (key, P[i] + s * (P[i + 1] - P[i]), t_veh, t_vru)
    if best is None:
        return None
    _, point, t_veh, t_vru = best

    veh_motion, vru_motion = _Motion(vehicle_kin, fps), _Motion(vru_kin, fps)
    half_l, half_w = vehicle.footprint[0] / 2, vehicle.footprint[1] / 2

    def veh_margin(t):
        c, h = veh_motion.state(t)
        d = point - c
        along = d[0] * h[0] + d[1] * h[1]
        across = -d[0] * h[1] + d[1] * h[0]
        return min(half_l - abs(along), half_w - abs(across))

    def vru_margin(t):
        c, _ = vru_motion.state(t)
        return vru_radius - math.hypot(point[0] - c[0], point[1] - c[1])

    iv = _coverage_interval(veh_margin, t_veh, veh_motion.times)
    iu = _coverage_interval(vru_margin, t_vru, vru_motion.times)
    if iv[0] <= iu[1] and iu[0] <= iv[1]:
        value = 0.0
        order = VEHICLE_FIRST if t_veh <= t_vru else VRU_FIRST
    elif iv[1] < iu[0]:
        value, order = iu[0] - iv[1], VEHICLE_FIRST
    else:
        value, order = iv[0] - iu[1], VRU_FIRST
    return PETResult(
        pet=float(value),
        observed_order=order,
        point=(float(point[0]), float(point[1])),
        vehicle_interval=(float(iv[0]), float(iv[1])),
        vru_interval=(float(iu[0]), float(iu[1])),
    )


# ---------------------------------------------------------------------------
# whole-dataset analysis
# ---------------------------------------------------------------------------

def analyze_encounter(
    span: EncounterSpan,
    dataset: Dataset,
    kin: Mapping[str, Kinematics],
    stationary_eps: float = STATIONARY_EPS,
    vru_radius: Mapping[UserClass, float] | None = None,
) -> Encounter:
    vehicle = dataset.trajectories[span.vehicle_id]
    vru = dataset.trajectories[span.vru_id]
    radii = VRU_RADIUS if vru_radius is None else vru_radius
    samples = ttac_series(vehicle, kin[vehicle.id], vru, kin[vru.id], (span.first_frame, span.last_frame), stationary_eps)
    m = min_ttac(samples)
    p = pet(vehicle, vru, dataset.fps, kin[vehicle.id], kin[vru.id], radii.get(vru.user_class, 0.3))
    return Encounter(
        vehicle_id=vehicle.id,
        vru_id=vru.id,
        frame_span=(span.first_frame, span.last_frame),
        samples=tuple(samples),
        min_ttac=None if m is None else m.ttac,
        min_ttac_frame=None if m is None else m.frame,
        min_ttac_location=None if m is None else m.location,
        forecast_order_at_min=None if m is None else m.forecast_order,
        pet=None if p is None else p.pet,
        observed_order=None if p is None else p.observed_order,
        encroachment_point=None if p is None else p.point,
    )


def analyze_dataset(
    dataset: Dataset,
    kin: Mapping[str, Kinematics],
    gate_radius: float = GATE_RADIUS,
    min_coexist_s: float = MIN_COEXIST_S,
    stationary_eps: float = STATIONARY_EPS,
    vru_radius: Mapping[UserClass, float] | None = None,
) -> list[Encounter]:
    spans = detect_encounters(dataset, gate_radius, min_coexist_s)
    return [analyze_encounter(s, dataset, kin, stationary_eps, vru_radius) for s in spans]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_encounters_csv(
    encounters: Sequence[Encounter],
    path,
    extra_columns: Mapping[str, Sequence] | None = None,
) -> None:
    """Encounter export; absent values are written as empty fields."""
    extra_columns = dict(extra_columns or {})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENCOUNTER_CSV_HEADER + tuple(extra_columns))
        for idx, e in enumerate(encounters):
            loc = e.min_ttac_location or (None, None)
            row = [
                e.vehicle_id, e.vru_id, e.min_ttac, e.min_ttac_frame, loc[0], loc[1],
                e.pet, e.forecast_order_at_min, e.observed_order,
            ]
            row += [col[idx] for col in extra_columns.values()]
            w.writerow([_fmt(v) for v in row])
