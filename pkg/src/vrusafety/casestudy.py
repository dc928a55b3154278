"""Generator for the constructed before/after example study.

Each encounter is designed backwards from a target minimum TTAC: a vehicle
drives along a straight two-lane road and one VRU crosses it at a right
angle, with both motions chosen so the pipeline measures the target value.
Constant-velocity designs hit the target to rounding precision; designs
where one user yields are tuned by re-running the pipeline on the pair.
Encounters occupy disjoint time slots so they never interact.

Run ``python -m vrusafety.casestudy --out DIR`` to write ``before.csv``,
``after.csv``, ``sections.csv``, ``regions.csv`` and ``config.toml``.
"""

from __future__ import annotations

import argparse
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .surrogate import VEHICLE_FIRST, VRU_FIRST, VRU_RADIUS, Encounter, analyze_dataset
from .trajectory import DEFAULT_FOOTPRINT, Dataset, Trajectory, UserClass, prepare, write_csv

# design kinds: forecast order / observed order
VEH_FIRST = "vehicle_first"  # both vehicle-first
VRU_FIRST_KIND = "vru_first"  # both VRU-first
VEHICLE_YIELDS = "vehicle_yields"  # forecast vehicle-first, vehicle brakes, VRU passes first
VRU_YIELDS = "vru_yields"  # forecast VRU-first, VRU waits at the curb

LANE_Y = -1.75
ROAD_END = 60.0
VRU_START_Y = -8.0
VRU_END_Y = 8.0
SIDEWALK_Y = 5.5
LEAD_S = 2.0  # minimum track time on either side of the critical instant
SLOT_GAP_S = 2.0
VEHICLE_DECEL = 3.0
VEHICLE_ACCEL = 2.0
PED_DECEL = 1.5

# auto-selected thresholds land on u = 1.60 (k = 10.86) and u = 1.70 (k = 11.28);
# the second set was tuned numerically against the threshold sweep
BEFORE_CONFLICTS = (1.5905, 1.5691, 1.5438, 1.5129, 1.4735, 1.4191, 1.3334, 1.1346)
AFTER_CONFLICTS = (1.6639, 1.662, 1.6347, 1.5577, 1.2863)

SECTIONS_CSV = """code,x1,y1,x2,y2,positive,negative
S1,-40,7,-40,-7,eastbound,westbound
S2,40,7,40,-7,eastbound,westbound
S3,0,7,0,-7,eastbound,westbound
S4,-30,0,30,0,northbound,southbound
"""

REGIONS_CSV = """name,x,y
approach_east,10,-6
approach_east,25,-6
approach_east,25,6
approach_east,10,6
approach_west,-25,-6
approach_west,-10,-6
approach_west,-10,6
approach_west,-25,6
shared_space,-10,-6
shared_space,10,-6
shared_space,10,6
shared_space,-10,6
"""

CONFIG_TOML = """# constructed example study; paths are relative to this file
before = "before.csv"
after = "after.csv"
sections = "sections.csv"
regions = "regions.csv"
fps = {fps}
horizon_days_factor = 200.0
out_dir = "out"
"""


@dataclass(frozen=True)
class EncounterDesign:
    kind: str
    target: float  # minimum TTAC in seconds
    vehicle_speed: float
    vru_speed: float
    vru_class: UserClass
    crossing_x: float
    reverse: bool = False  # vehicle travels westbound (design rotated by 180 degrees)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    conflicts: tuple[float, ...]
    table: tuple[tuple[int, int], tuple[int, int]]  # forecast x observed encroachment counts
    pet_total: int  # encounters with PET below the cutoff
    vru_first_total: int  # of which the VRU passed first
    far_count: int  # encounters with PET above the cutoff
    vehicle_speed: tuple[float, float]
    walker_every: int = 4


BEFORE_SPEC = ScenarioSpec("before", BEFORE_CONFLICTS, ((17, 3), (0, 13)), 253, 94, 20, (8.0, 12.0))
AFTER_SPEC = ScenarioSpec("after", AFTER_CONFLICTS, ((17, 7), (1, 10)), 249, 104, 20, (5.5, 8.5))


@dataclass(frozen=True)
class BuiltPair:
    design: EncounterDesign
    vehicle_frames: np.ndarray
    vehicle_xy: np.ndarray
    vru_frames: np.ndarray
    vru_xy: np.ndarray
    measured: Encounter


# ---------------------------------------------------------------------------
# motion helpers
# ---------------------------------------------------------------------------

def _ramp(t, t0: float, s0: float, v0: float, phases) -> np.ndarray:
    """Position along a path from constant-acceleration phases.

    ``phases`` is a list of ``(t_end, accel)``; before ``t0`` and after the
    last phase the motion continues at constant speed.
    """
    t = np.asarray(t, float)
    s = s0 + v0 * (t - t0)
    tc, sc, vc = t0, s0, v0
    for t_end, acc in phases:
        m = t > tc
        dt = np.clip(t[m], tc, t_end) - tc
        s[m] = sc + vc * dt + 0.5 * acc * dt**2
        d = t_end - tc
        sc, vc, tc = sc + vc * d + 0.5 * acc * d**2, vc + acc * d, t_end
        m = t > tc
        s[m] = sc + vc * (t[m] - tc)
    return s


def _frames(t_start: float, t_end: float, fps: float) -> np.ndarray:
    return np.arange(math.floor(t_start * fps), math.ceil(t_end * fps) + 1)


def _sample(fn: Callable, frames: np.ndarray, fps: float) -> np.ndarray:
    return np.round(fn(frames / fps), 6)


def _vru_radius(cls: UserClass) -> float:
    return VRU_RADIUS[cls]


# ---------------------------------------------------------------------------
# single-pair construction
# ---------------------------------------------------------------------------

def _measure(vf, vxy, pf, pxy, cls: UserClass, fps: float, footprint) -> Encounter:
    veh = Trajectory("v", UserClass.MOTOR_VEHICLE, vf, vxy, tuple(footprint))
    vru = Trajectory("p", cls, pf, pxy)
    ds = Dataset("design", fps, {"v": veh, "p": vru}, 1.0)
    ds, kin = prepare(ds)
    encs = analyze_dataset(ds, kin)
    if len(encs) != 1:
        raise RuntimeError("designed pair was not gated as one encounter")
    return encs[0]


def _build(design: EncounterDesign, fps: float, footprint, onset: float, jitter: float):
    """Sample one canonical pair (vehicle eastbound on y = LANE_Y, VRU northbound at x = a)."""
    L, W = footprint
    a, v, w = design.crossing_x, design.vehicle_speed, design.vru_speed
    r = _vru_radius(design.vru_class)
    y_near, y_far = LANE_Y - W / 2, LANE_Y + W / 2
    dt = 1.0 / fps
    T1 = 0.5 * dt + jitter  # critical instant, mid-way between frames 0 and 1

    if design.kind == VEH_FIRST:
        # rear edge reaches x = a at T1; VRU reaches the near corner c - dt/2 later
        T2 = T1 + design.target - 0.5 * dt
        veh_x = lambda t: a + L / 2 + v * (t - T1)
        vru_y = lambda t: y_near + w * (t - T2)
        t_crit = T1
    elif design.kind == VRU_FIRST_KIND:
        # VRU clears the far corner at T1; the front reaches x = a c - dt/2 later
        T3 = T1 + design.target - 0.5 * dt
        veh_x = lambda t: a - L / 2 + v * (t - T3)
        vru_y = lambda t: y_far + w * (t - T1)
        t_crit = T3
    elif design.kind == VEHICLE_YIELDS:
        t_near = T1  # VRU at the near corner
        t_b = t_near - onset  # braking onset
        x_stop = a - 1.0 - r  # front stops short of the VRU path
        t_stop = t_b + v / VEHICLE_DECEL
        t_go = max(t_near + (W + 2 * r + 0.3) / w, t_stop)
        t_full = t_go + v / VEHICLE_ACCEL
        x_b = x_stop - v * v / (2 * VEHICLE_DECEL) - L / 2
        phases = [(t_stop, -VEHICLE_DECEL), (t_go, 0.0), (t_full, VEHICLE_ACCEL)]
        veh_x = lambda t: _ramp(t, t_b, x_b, v, phases)
        vru_y = lambda t: y_near + w * (t - t_near)
        t_crit = t_b
    elif design.kind == VRU_YIELDS:
        t_front = T1  # vehicle front reaches x = a
        t_s = t_front - onset  # VRU starts slowing
        y_stop = y_near - 0.75
        y_s = y_stop - w * w / (2 * PED_DECEL)
        t_stop = t_s + w / PED_DECEL
        t_go = max(t_front + L / v + 0.8, t_stop)
        t_full = t_go + w / PED_DECEL
        phases = [(t_stop, -PED_DECEL), (t_go, 0.0), (t_full, PED_DECEL)]
        veh_x = lambda t: a - L / 2 + v * (t - t_front)
        vru_y = lambda t: _ramp(t, t_s, y_s, w, phases)
        t_crit = t_s
    else:
        raise ValueError(f"unknown design kind {design.kind!r}")

    # solve track extents numerically on a coarse grid around the critical instant
    span = np.arange(-120.0, 120.0, dt) + t_crit
    vx, py = veh_x(span), vru_y(span)
    first, last = min(t_crit, T1) - LEAD_S, max(t_crit, T1) + LEAD_S
    t_v0 = min(span[np.argmax(vx >= -ROAD_END)], first)
    t_v1 = max(span[np.argmax(vx >= ROAD_END)], last)
    t_p0 = min(span[np.argmax(py >= VRU_START_Y)], first)
    t_p1 = max(span[np.argmax(py >= VRU_END_Y)], last)
    vf = _frames(t_v0, t_v1, fps)
    pf = _frames(t_p0, t_p1, fps)
    vxy = np.column_stack([_sample(veh_x, vf, fps), np.full(len(vf), LANE_Y)])
    pxy = np.column_stack([np.full(len(pf), a), _sample(vru_y, pf, fps)])
    return vf, vxy, pf, pxy


def _accepts(design: EncounterDesign, enc: Encounter, pet_cutoff: float, window: tuple[float, float]) -> bool:
    if enc.min_ttac is None or enc.pet is None:
        return False
    lo, hi = window
    if not lo <= enc.min_ttac <= hi:
        return False
    forecast, observed = {
        VEH_FIRST: (VEHICLE_FIRST, VEHICLE_FIRST),
        VRU_FIRST_KIND: (VRU_FIRST, VRU_FIRST),
        VEHICLE_YIELDS: (VEHICLE_FIRST, VRU_FIRST),
        VRU_YIELDS: (VRU_FIRST, VEHICLE_FIRST),
    }[design.kind]
    if enc.forecast_order_at_min != forecast or enc.observed_order != observed:
        return False
    return (enc.pet < pet_cutoff) == (design.target < pet_cutoff)


def build_pair(
    design: EncounterDesign,
    fps: float = 25.0,
    footprint=DEFAULT_FOOTPRINT,
    pet_cutoff: float = 5.0,
    tol: float = 2e-4,
) -> BuiltPair:
    """Construct and verify one encounter; raises if no tuning reaches the target."""
    if design.kind in (VEH_FIRST, VRU_FIRST_KIND):
        window = (design.target - tol, design.target + tol)
        attempts = [(0.0, 0.0)]
    else:
        window = (design.target - 0.05, design.target + 0.05)
        attempts = [(None, j * 0.37 / fps) for j in range(12)]
    for onset, jitter in attempts:
        if onset is None:
            onset = design.target
            for _ in range(8):
                vf, vxy, pf, pxy = _build(design, fps, footprint, onset, jitter)
                enc = _measure(vf, vxy, pf, pxy, design.vru_class, fps, footprint)
                if enc.min_ttac is None:
                    break
                err = design.target - enc.min_ttac
                if abs(err) < 0.01:
                    break
                onset += err
        else:
            vf, vxy, pf, pxy = _build(design, fps, footprint, onset, jitter)
            enc = _measure(vf, vxy, pf, pxy, design.vru_class, fps, footprint)
        if _accepts(design, enc, pet_cutoff, window):
            if design.reverse:  # rotate by 180 degrees about the origin
                vxy, pxy = -vxy + 0.0, -pxy + 0.0
            return BuiltPair(design, vf, vxy, pf, pxy, enc)
    raise RuntimeError(f"could not realise {design}")


# ---------------------------------------------------------------------------
# scenario assembly
# ---------------------------------------------------------------------------

def scenario_designs(spec: ScenarioSpec, rng: np.random.Generator) -> list[EncounterDesign]:
    """Encounter designs meeting the scenario's conflict, table and yield targets."""
    (vv, vp), (pv, pp) = spec.table
    n_veh_conf = (len(spec.conflicts) + 1) // 2
    table_total = vv + vp + pv + pp
    pet_only = spec.pet_total - table_total
    pet_only_vru = spec.vru_first_total - (vp + pp)
    if min(pet_only, pet_only_vru, pet_only - pet_only_vru) < 0:
        raise ValueError("inconsistent scenario targets")

    plan: list[tuple[str, float, bool]] = []  # kind, ttac, ped-only
    for i, c in enumerate(spec.conflicts):
        plan.append((VEH_FIRST if i < n_veh_conf else VRU_FIRST_KIND, c, True))
    n_vru_conf = len(spec.conflicts) - n_veh_conf
    plan += [(VEH_FIRST, float(rng.uniform(3.05, 3.95)), True) for _ in range(vv - n_veh_conf)]
    plan += [(VRU_FIRST_KIND, float(rng.uniform(3.05, 3.95)), True) for _ in range(pp - n_vru_conf)]
    plan += [(VEHICLE_YIELDS, float(rng.uniform(3.2, 3.8)), True) for _ in range(vp)]
    plan += [(VRU_YIELDS, float(rng.uniform(3.2, 3.8)), True) for _ in range(pv)]
    plan += [(VRU_FIRST_KIND, float(rng.uniform(4.1, 4.4)), False) for _ in range(pet_only_vru)]
    plan += [(VEH_FIRST, float(rng.uniform(4.1, 4.4)), False) for _ in range(pet_only - pet_only_vru)]
    plan += [(VEH_FIRST, float(rng.uniform(5.5, 7.5)), True) for _ in range(spec.far_count)]

    designs = []
    for kind, c, ped_only in plan:
        bike = not ped_only and rng.random() < 0.2
        cls = UserClass.BICYCLIST if bike else UserClass.PEDESTRIAN
        designs.append(
            EncounterDesign(
                kind=kind,
                target=c,
                vehicle_speed=float(rng.uniform(*spec.vehicle_speed)),
                vru_speed=float(rng.uniform(3.5, 4.5) if bike else rng.uniform(1.2, 1.6)),
                vru_class=cls,
                crossing_x=float(rng.uniform(-25.0, 25.0)),
                reverse=bool(rng.random() < 0.5),
            )
        )
    order = rng.permutation(len(designs))
    return [designs[i] for i in order]


def _walker(frames0: int, fps: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sidewalk pedestrian walking parallel to the road past S1 or S2."""
    speed = float(rng.uniform(1.1, 1.5))
    x_center = -40.0 if rng.random() < 0.5 else 40.0
    sign = 1.0 if rng.random() < 0.5 else -1.0
    y = SIDEWALK_Y if rng.random() < 0.5 else -SIDEWALK_Y
    n = int(round(12.0 / speed * fps))
    frames = frames0 + np.arange(n + 1)
    x = x_center - sign * 6.0 + sign * speed * np.arange(n + 1) / fps
    return frames, np.column_stack([np.round(x, 6), np.full(n + 1, y)])


def build_scenario(
    spec: ScenarioSpec,
    seed: int = 7,
    fps: float = 25.0,
    footprint=DEFAULT_FOOTPRINT,
) -> tuple[Dataset, list[BuiltPair]]:
    rng = np.random.default_rng(seed)
    designs = scenario_designs(spec, rng)
    trajectories: dict[str, Trajectory] = {}
    pairs = []
    cursor = 0
    gap = int(round(SLOT_GAP_S * fps))
    for i, design in enumerate(designs, start=1):
        pair = build_pair(design, fps, footprint)
        pairs.append(pair)
        shift = cursor - min(pair.vehicle_frames[0], pair.vru_frames[0])
        vid, pid = f"v{i:04d}", f"{'b' if design.vru_class is UserClass.BICYCLIST else 'p'}{i:04d}"
        trajectories[vid] = Trajectory(vid, UserClass.MOTOR_VEHICLE, pair.vehicle_frames + shift, pair.vehicle_xy, tuple(footprint))
        trajectories[pid] = Trajectory(pid, design.vru_class, pair.vru_frames + shift, pair.vru_xy)
        end = max(pair.vehicle_frames[-1], pair.vru_frames[-1]) + shift
        if spec.walker_every and i % spec.walker_every == 0:
            wf, wxy = _walker(cursor, fps, rng)
            trajectories[f"w{i:04d}"] = Trajectory(f"w{i:04d}", UserClass.PEDESTRIAN, wf, wxy)
            end = max(end, wf[-1])
        cursor = int(end) + gap
    return Dataset(spec.name, fps, trajectories, cursor / fps), pairs


def write_casestudy(out_dir, seed: int = 7, fps: float = 25.0) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for offset, spec in enumerate((BEFORE_SPEC, AFTER_SPEC)):
        ds, _ = build_scenario(spec, seed=seed + offset, fps=fps)
        paths[spec.name] = out / f"{spec.name}.csv"
        write_csv(ds, paths[spec.name])
    for name, text in (
        ("sections.csv", SECTIONS_CSV),
        ("regions.csv", REGIONS_CSV),
        ("config.toml", CONFIG_TOML.format(fps=fps)),
    ):
        paths[name] = out / name
        paths[name].write_text(text, encoding="utf-8")
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Write the constructed before/after example study.")
    parser.add_argument("--out", default="casestudy", help="output directory")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--fps", type=float, default=25.0)
    args = parser.parse_args(argv)
    for name, path in write_casestudy(args.out, args.seed, args.fps).items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
