"""Trajectory ingestion, cleaning and kinematics.

Trajectories arrive as flat CSV tables (one row per tracked sample) and are
grouped into immutable :class:`Trajectory` objects held by a :class:`Dataset`.
Downstream modules only ever consume world-plane metric coordinates, so the
homography and smoothing steps live here too, together with the
cross-section event detector used by the volume and speed analyses.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    ClassificationError,
    DuplicateSampleError,
    InsufficientDataError,
    ProjectiveDegeneracyError,
    TrajectoryParseError,
    VruSafetyError,
)

log = logging.getLogger(__name__)

DEFAULT_FPS = 25.0
DEFAULT_SMOOTHING_S = 0.4
DEFAULT_DIFF_HALF_WIDTH = 2
STATIONARY_EPS = 0.1  # m/s
DEFAULT_FOOTPRINT = (4.4, 1.8)  # length, width [m]
CSV_HEADER = ("id", "frame", "x", "y", "label")


class UserClass(str, Enum):
    PEDESTRIAN = "pedestrian"
    BICYCLIST = "bicyclist"
    MOTOR_VEHICLE = "motor_vehicle"

    @property
    def is_vru(self) -> bool:
        return self is not UserClass.MOTOR_VEHICLE


DEFAULT_CLASS_MAP: dict[str, UserClass] = {
    "ped": UserClass.PEDESTRIAN,
    "pedestrian": UserClass.PEDESTRIAN,
    "bike": UserClass.BICYCLIST,
    "bicycle": UserClass.BICYCLIST,
    "cyclist": UserClass.BICYCLIST,
    "bicyclist": UserClass.BICYCLIST,
    "car": UserClass.MOTOR_VEHICLE,
    "vehicle": UserClass.MOTOR_VEHICLE,
    "motor_vehicle": UserClass.MOTOR_VEHICLE,
    "truck": UserClass.MOTOR_VEHICLE,
    "bus": UserClass.MOTOR_VEHICLE,
    "van": UserClass.MOTOR_VEHICLE,
}


@dataclass(frozen=True)
class TrajectoryPoint:
    frame: int
    x: float
    y: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped world-plane path of one road user.

    ``frames`` is an int array, ``xy`` an ``(n, 2)`` float array; both are
    read-only. ``footprint`` is ``(length, width)`` in meters for motor
    vehicles and ``None`` for pedestrians and bicyclists.
    """

    id: str
    user_class: UserClass
    frames: np.ndarray
    xy: np.ndarray
    footprint: tuple[float, float] | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.int64)
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        if len(frames) != len(xy):
            raise ValueError("frames and xy lengths differ")
        if len(frames) < 2:
            raise InsufficientDataError(f"trajectory {self.id!r} has fewer than 2 points")
        if np.any(np.diff(frames) <= 0):
            raise ValueError(f"trajectory {self.id!r}: frames must be strictly increasing")
        if not np.all(np.isfinite(xy)):
            raise ValueError(f"trajectory {self.id!r}: non-finite coordinates")
        if self.user_class is UserClass.MOTOR_VEHICLE:
            if self.footprint is None:
                raise ValueError(f"motor vehicle {self.id!r} needs a footprint")
            length, width = self.footprint
            if not (length > 0 and width > 0):
                raise ValueError(f"motor vehicle {self.id!r}: footprint must be positive")
        elif self.footprint is not None:
            raise ValueError(f"{self.user_class.value} {self.id!r} must not carry a footprint")
        object.__setattr__(self, "frames", _frozen(frames.copy()))
        object.__setattr__(self, "xy", _frozen(xy.copy()))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def points(self) -> list[TrajectoryPoint]:
        return [TrajectoryPoint(int(f), float(x), float(y)) for f, (x, y) in zip(self.frames, self.xy)]

    def duration(self, fps: float) -> float:
        return (self.frames[-1] - self.frames[0]) / fps

    def with_xy(self, xy: np.ndarray) -> Trajectory:
        return replace(self, xy=xy)


@dataclass(frozen=True)
class Dataset:
    scenario_label: str
    fps: float
    trajectories: Mapping[str, Trajectory]
    observation_seconds: float

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if not self.observation_seconds > 0:
            raise ValueError("observation_seconds must be positive")
        trajs = dict(self.trajectories)
        for key, traj in trajs.items():
            if key != traj.id:
                raise ValueError(f"trajectory key {key!r} does not match id {traj.id!r}")
        object.__setattr__(self, "trajectories", trajs)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories.values())

    def __len__(self) -> int:
        return len(self.trajectories)

    def of_class(self, *classes: UserClass) -> list[Trajectory]:
        return [t for t in self if t.user_class in classes]

    def class_counts(self) -> dict[str, int]:
        counts = {c.value: 0 for c in UserClass}
        for t in self:
            counts[t.user_class.value] += 1
        return counts

    def map(self, fn) -> Dataset:
        return replace(self, trajectories={t.id: fn(t) for t in self})


@dataclass(frozen=True)
class CrossSection:
    code: str
    endpoints: tuple[tuple[float, float], tuple[float, float]]
    positive_direction_label: str
    negative_direction_label: str

    def __post_init__(self):
        a, b = self.endpoints
        if tuple(a) == tuple(b):
            raise ValueError(f"cross-section {self.code!r} has coincident endpoints")

    @property
    def direction_labels(self) -> tuple[str, str]:
        return self.positive_direction_label, self.negative_direction_label


@dataclass(frozen=True)
class KinematicState:
    frame: int
    position: tuple[float, float]
    velocity: tuple[float, float]
    speed: float
    heading: tuple[float, float] | None


@dataclass(frozen=True, eq=False)
class Kinematics(Sequence):
    """Per-frame kinematic states of one trajectory, stored column-wise.

    Indexing yields :class:`KinematicState` objects; the arrays are exposed
    for vectorised consumers. ``heading`` rows are NaN where no valid heading
    exists yet (user stationary since the start of the track).
    """

    frames: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    speed: np.ndarray
    heading: np.ndarray

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        h = self.heading[i]
        return KinematicState(
            frame=int(self.frames[i]),
            position=(float(self.position[i, 0]), float(self.position[i, 1])),
            velocity=(float(self.velocity[i, 0]), float(self.velocity[i, 1])),
            speed=float(self.speed[i]),
            heading=None if np.isnan(h[0]) else (float(h[0]), float(h[1])),
        )

    def index_of(self, frame: int) -> int:
        i = int(np.searchsorted(self.frames, frame))
        if i >= len(self.frames) or self.frames[i] != frame:
            raise KeyError(frame)
        return i


@dataclass(frozen=True)
class CrossingEvent:
    trajectory_id: str
    section: str
    frame: float
    direction: str
    speed: float  # m/s


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def _resolve_class_map(class_map: Mapping[str, UserClass | str] | None) -> dict[str, UserClass]:
    if class_map is None:
        return dict(DEFAULT_CLASS_MAP)
    return {str(k).strip().lower(): UserClass(v) for k, v in class_map.items()}


def ingest_csv(
    path,
    fps: float = DEFAULT_FPS,
    class_map: Mapping[str, UserClass | str] | None = None,
    *,
    scenario_label: str = "before",
    observation_seconds: float | None = None,
    footprint: tuple[float, float] = DEFAULT_FOOTPRINT,
) -> Dataset:
    """Read a trajectory table ``id,frame,x,y,label`` into a :class:`Dataset`.

    Rows are grouped by id and sorted by frame. Labels are matched
    case-insensitively against ``class_map``. Tracks with a single sample
    cannot carry kinematics and are dropped with a warning.

    When ``observation_seconds`` is omitted the surveyed duration is taken as
    the frame span of the whole file.
    """
    if not fps > 0:
        raise ValueError("fps must be positive")
    path = Path(path)
    cmap = _resolve_class_map(class_map)

    samples: dict[str, dict[int, tuple[float, float]]] = defaultdict(dict)
    labels: dict[str, UserClass] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TrajectoryParseError(path, 1, "empty file (missing header)") from None
        if tuple(h.strip().lower() for h in header) != CSV_HEADER:
            raise TrajectoryParseError(path, 1, f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise TrajectoryParseError(path, line, f"expected 5 fields, got {len(row)}")
            tid, frame_s, x_s, y_s, label = (c.strip() for c in row)
            try:
                frame = int(frame_s)
                x, y = float(x_s), float(y_s)
            except ValueError:
                raise TrajectoryParseError(path, line, f"non-numeric frame/x/y in {row!r}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise TrajectoryParseError(path, line, "non-finite coordinate")
            ucls = cmap.get(label.lower())
            if ucls is None:
                raise ClassificationError(label, path, line)
            prev = labels.setdefault(tid, ucls)
            if prev is not ucls:
                raise TrajectoryParseError(path, line, f"trajectory {tid!r} changes class from {prev.value} to {ucls.value}")
            if frame in samples[tid]:
                raise DuplicateSampleError(path, line, tid, frame)
            samples[tid][frame] = (x, y)

    trajectories: dict[str, Trajectory] = {}
    all_frames = []
    for tid, by_frame in samples.items():
        frames = sorted(by_frame)
        all_frames.extend((frames[0], frames[-1]))
        if len(frames) < 2:
            log.warning("%s: dropping trajectory %r with a single sample", path, tid)
            continue
        ucls = labels[tid]
        trajectories[tid] = Trajectory(
            id=tid,
            user_class=ucls,
            frames=np.array(frames),
            xy=np.array([by_frame[f] for f in frames]),
            footprint=tuple(footprint) if ucls is UserClass.MOTOR_VEHICLE else None,
        )
    if observation_seconds is None:
        if not all_frames:
            raise InsufficientDataError(f"{path}: no samples; pass observation_seconds explicitly")
        observation_seconds = (max(all_frames) - min(all_frames) + 1) / fps
    return Dataset(scenario_label, float(fps), trajectories, float(observation_seconds))


def write_csv(dataset: Dataset, path, label_of: Mapping[UserClass, str] | None = None) -> None:
    """Write a dataset back to the ``id,frame,x,y,label`` format."""
    label_of = label_of or {c: c.value for c in UserClass}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t in dataset:
            lab = label_of[t.user_class]
            for f, (x, y) in zip(t.frames, t.xy):
                w.writerow([t.id, int(f), f"{x:.6f}", f"{y:.6f}", lab])


# ---------------------------------------------------------------------------
# homography
# ---------------------------------------------------------------------------

def load_homography(path) -> np.ndarray:
    """Read 9 whitespace-separated reals (row-major) into a 3x3 matrix."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        vals = [float(v) for v in text.split()]
    except ValueError as exc:
        raise VruSafetyError(f"{path}: homography must contain only reals ({exc})") from None
    if len(vals) != 9:
        raise VruSafetyError(f"{path}: expected 9 reals, found {len(vals)}")
    return np.array(vals).reshape(3, 3)


def apply_homography(dataset: Dataset, H) -> Dataset:
    H = np.asarray(H, dtype=float)
    if H.shape != (3, 3):
        raise ValueError("homography must be 3x3")
    if abs(np.linalg.det(H)) < 1e-12:
        raise ValueError("homography matrix is singular")

    def transform(t: Trajectory) -> Trajectory:
        hom = np.column_stack([t.xy, np.ones(len(t))]) @ H.T
        w = hom[:, 2]
        bad = np.flatnonzero(np.abs(w) < 1e-9)
        if bad.size:
            i = int(bad[0])
            raise ProjectiveDegeneracyError(t.id, int(t.frames[i]), float(w[i]))
        return t.with_xy(hom[:, :2] / w[:, None])

    return dataset.map(transform)


# ---------------------------------------------------------------------------
# smoothing and kinematics
# ---------------------------------------------------------------------------

def smooth(trajectory: Trajectory, window_seconds: float = DEFAULT_SMOOTHING_S, fps: float = DEFAULT_FPS) -> Trajectory:
    """Centered moving average over ``window_seconds``.

    The window spans ``frame ± n//2`` with ``n = round(window_seconds * fps)``
    and is truncated at the track ends (and around tracking gaps, since it is
    defined on frame numbers rather than sample indices).
    """
    if window_seconds < 0:
        raise ValueError("window_seconds must be non-negative")
    half = int(round(window_seconds * fps)) // 2
    if half == 0:
        return trajectory
    frames = trajectory.frames
    lo = np.searchsorted(frames, frames - half, side="left")
    hi = np.searchsorted(frames, frames + half, side="right")
    csum = np.vstack([np.zeros((1, 2)), np.cumsum(trajectory.xy, axis=0)])
    xy = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    return trajectory.with_xy(xy)


def kinematics(
    trajectory: Trajectory,
    fps: float = DEFAULT_FPS,
    diff_half_width: int = DEFAULT_DIFF_HALF_WIDTH,
    stationary_eps: float = STATIONARY_EPS,
) -> Kinematics:
    """Velocity by central differences of half-width ``diff_half_width`` samples.

    Near the ends the stencil is clipped to the available samples. The time
    base always comes from the actual frame numbers, so tracking gaps are
    handled without assuming contiguity.
    """
    n = len(trajectory)
    if n < 2:
        raise InsufficientDataError(f"trajectory {trajectory.id!r} needs at least 2 points")
    if diff_half_width < 1:
        raise ValueError("diff_half_width must be >= 1")
    idx = np.arange(n)
    lo = np.clip(idx - diff_half_width, 0, n - 1)
    hi = np.clip(idx + diff_half_width, 0, n - 1)
    xy = trajectory.xy
    dt = (trajectory.frames[hi] - trajectory.frames[lo]) / fps
    vel = (xy[hi] - xy[lo]) / dt[:, None]
    speed = np.hypot(vel[:, 0], vel[:, 1])

    heading = np.full((n, 2), np.nan)
    last = None
    for i in range(n):
        if speed[i] > stationary_eps:
            last = vel[i] / speed[i]
        if last is not None:
            heading[i] = last
    return Kinematics(
        frames=_frozen(trajectory.frames.copy()),
        position=_frozen(xy.copy()),
        velocity=_frozen(vel),
        speed=_frozen(speed),
        heading=_frozen(heading),
    )


# ---------------------------------------------------------------------------
# cross-sections
# ---------------------------------------------------------------------------

def load_sections(path) -> list[CrossSection]:
    """Parse ``code,x1,y1,x2,y2,pos_label,neg_label`` lines (``#`` comments allowed)."""
    sections = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if len(row) != 7:
                raise TrajectoryParseError(path, line_no, f"cross-section needs 7 fields, got {len(row)}")
            code, *coords, pos, neg = (c.strip() for c in row)
            try:
                x1, y1, x2, y2 = map(float, coords)
            except ValueError:
                if line_no == 1:  # optional header
                    continue
                raise TrajectoryParseError(path, line_no, "non-numeric cross-section endpoint") from None
            sections.append(CrossSection(code, ((x1, y1), (x2, y2)), pos, neg))
    return sections


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def cross_section_events(
    dataset: Dataset,
    section: CrossSection,
    *,
    kinematics_by_id: Mapping[str, Kinematics] | None = None,
    dedupe: bool = False,
) -> list[CrossingEvent]:
    """Detect every crossing of ``section`` by consecutive sample pairs.

    The direction is positive when ``cross(section_dir, movement) > 0`` where
    ``section_dir`` runs from the first to the second endpoint. Speeds come
    from the kinematics (computed with defaults when not supplied) and are
    linearly interpolated at the crossing instant. With ``dedupe`` each
    trajectory contributes at most one event per direction (the first).
    """
    a = np.asarray(section.endpoints[0], float)
    b = np.asarray(section.endpoints[1], float)
    s = b - a
    events: list[CrossingEvent] = []
    for t in dataset:
        p, q = t.xy[:-1], t.xy[1:]
        d = q - p
        o_p = _cross(s, p - a)
        o_q = _cross(s, q - a)
        o_a = _cross(d, a - p)
        o_b = _cross(d, b - p)
        # half-open sides: a sample lying exactly on the line counts as the positive side
        hit = np.flatnonzero(((o_p >= 0) != (o_q >= 0)) & (o_a * o_b < 0))
        if hit.size == 0:
            continue
        kin = kinematics_by_id[t.id] if kinematics_by_id is not None else kinematics(t, dataset.fps)
        seen = set()
        for i in hit:
            frac = o_p[i] / (o_p[i] - o_q[i])
            direction = section.positive_direction_label if _cross(s, d[i]) > 0 else section.negative_direction_label
            if dedupe and direction in seen:
                continue
            seen.add(direction)
            f0, f1 = t.frames[i], t.frames[i + 1]
            events.append(
                CrossingEvent(
                    trajectory_id=t.id,
                    section=section.code,
                    frame=float(f0 + frac * (f1 - f0)),
                    direction=direction,
                    speed=float(kin.speed[i] + frac * (kin.speed[i + 1] - kin.speed[i])),
                )
            )
    return events


def prepare(
    dataset: Dataset,
    *,
    homography=None,
    window_seconds: float = DEFAULT_SMOOTHING_S,
    diff_half_width: int = DEFAULT_DIFF_HALF_WIDTH,
    stationary_eps: float = STATIONARY_EPS,
) -> tuple[Dataset, dict[str, Kinematics]]:
    """Homography (optional) + smoothing + kinematics for a whole dataset."""
    if homography is not None:
        dataset = apply_homography(dataset, homography)
    dataset = dataset.map(lambda t: smooth(t, window_seconds, dataset.fps))
    kin = {t.id: kinematics(t, dataset.fps, diff_half_width, stationary_eps) for t in dataset}
    return dataset, kin
