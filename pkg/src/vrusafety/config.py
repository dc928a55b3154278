"""Study configuration: a flat TOML document with typed defaults.

Relative paths are resolved against the directory holding the config file.
Every analysis constant (cutoffs, sweep grid, annualisation) lives here as a
default so a study can override it without code changes.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised only on 3.10
    import tomli as tomllib


@dataclass(frozen=True)
class StudyConfig:
    before: str
    after: str
    sections: str
    fps: float = 25.0
    homography: str | None = None
    coordinates_metric: bool = False  # skip the homography even when one is configured
    regions: str | None = None
    out_dir: str = "out"

    pedestrian_labels: tuple[str, ...] = ("ped", "pedestrian")
    bicyclist_labels: tuple[str, ...] = ("bike", "bicycle", "cyclist", "bicyclist")
    vehicle_labels: tuple[str, ...] = ("car", "vehicle", "motor_vehicle", "truck", "bus", "van")

    smoothing_window_s: float = 0.4
    diff_half_width: int = 2
    stationary_eps: float = 0.1
    vehicle_length: float = 4.4
    vehicle_width: float = 1.8
    pedestrian_radius: float = 0.3
    bicyclist_radius: float = 0.5

    gate_radius: float = 25.0
    min_coexist_s: float = 0.5
    pet_cutoff: float = 5.0
    interaction_ttac_cutoff: float = 4.0

    u_start: float = 3.0
    u_step: float = 0.05
    u_floor: float = 0.5
    n_min: int = 3
    rel_tol: float = 0.05
    stable_zone_width: float = 0.25
    manual_u_before: float | None = None
    manual_u_after: float | None = None

    horizon_seconds: float | None = None
    horizon_days_factor: float | None = 200.0
    observation_seconds_before: float | None = None
    observation_seconds_after: float | None = None

    yates: bool = False
    mcnemar_asymptotic: bool = False
    mw_exact_max: int = 20
    reliability_n: int = 13

    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        positive = (
            "fps", "smoothing_window_s", "stationary_eps", "vehicle_length", "vehicle_width",
            "pedestrian_radius", "bicyclist_radius", "gate_radius", "min_coexist_s", "pet_cutoff",
            "interaction_ttac_cutoff", "u_start", "u_step", "u_floor", "stable_zone_width",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0 (got {getattr(self, name)!r})")
        if not self.u_start > self.u_floor:
            raise ConfigError("u_start must exceed u_floor")
        if self.diff_half_width < 1 or self.n_min < 1:
            raise ConfigError("diff_half_width and n_min must be >= 1")
        if self.rel_tol < 0:
            raise ConfigError("rel_tol must be >= 0")
        if self.horizon_seconds is None and self.horizon_days_factor is None:
            raise ConfigError("set horizon_seconds or horizon_days_factor")
        for name in ("horizon_seconds", "horizon_days_factor", "observation_seconds_before", "observation_seconds_after"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be > 0")

    def path(self, key: str) -> Path | None:
        value = getattr(self, key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def dataset_path(self, scenario: str) -> Path:
        if scenario not in ("before", "after"):
            raise ConfigError(f"unknown scenario {scenario!r}")
        return self.path(scenario)

    def manual_u(self, scenario: str) -> float | None:
        return getattr(self, f"manual_u_{scenario}")

    def observation_seconds(self, scenario: str) -> float | None:
        return getattr(self, f"observation_seconds_{scenario}")

    def horizon_for(self, observation_seconds: float) -> float:
        """Horizon T: explicit seconds, or ``days_factor`` times the observation period."""
        if self.horizon_seconds is not None:
            return self.horizon_seconds
        return self.horizon_days_factor * observation_seconds

    def class_map(self) -> dict[str, str]:
        out = {}
        for labels, cls in (
            (self.pedestrian_labels, "pedestrian"),
            (self.bicyclist_labels, "bicyclist"),
            (self.vehicle_labels, "motor_vehicle"),
        ):
            for label in labels:
                out[label] = cls
        return out

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def load_config(path, **overrides) -> StudyConfig:
    """Read a flat TOML config; unknown keys and nested tables are rejected."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raw.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name: f for f in fields(StudyConfig) if f.name != "base_dir"}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{path}: unknown key {key!r}")
        if isinstance(value, dict):
            raise ConfigError(f"{path}: key {key!r} must be a scalar or list (config is flat)")
    for key in ("before", "after", "sections"):
        if key not in raw:
            raise ConfigError(f"{path}: missing required key {key!r}")
    for key in ("pedestrian_labels", "bicyclist_labels", "vehicle_labels"):
        if key in raw:
            raw[key] = tuple(str(v) for v in raw[key])
    try:
        return StudyConfig(base_dir=str(path.parent), **raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_regions(path) -> dict[str, list[tuple[float, float]]]:
    """Named polygons from ``name,x,y`` rows, vertices in drawing order.

    Blank lines, ``#`` comments and a ``name,x,y`` header are skipped.
    """
    regions: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip() == "name":
                continue
            if len(row) != 3:
                raise ConfigError(f"{path}:{lineno}: expected name,x,y")
            try:
                xy = (float(row[1]), float(row[2]))
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: non-numeric vertex") from None
            regions.setdefault(row[0].strip(), []).append(xy)
    for name, verts in regions.items():
        if len(verts) < 3:
            raise ConfigError(f"{path}: region {name!r} needs at least 3 vertices")
    return dict(sorted(regions.items()))
