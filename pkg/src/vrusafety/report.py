"""Before/after study pipeline and report serialisation.

Everything here composes the public operations of the other modules; the
CLI adds argument parsing and exit codes only.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from . import behavior as bh
from . import evt
from .config import StudyConfig, load_regions
from .errors import InsufficientConflictsError, InsufficientDataError, UndefinedTestError
from .surrogate import Encounter, analyze_dataset, write_encounters_csv
from .trajectory import (
    CrossSection,
    Dataset,
    Kinematics,
    UserClass,
    ingest_csv,
    load_homography,
    load_sections,
    prepare,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
SCENARIOS = ("before", "after")
SWEEP_CSV_HEADER = ("u_s", "n", "k", "p_crash", "inc_t", "fittable")


@dataclass
class ScenarioResult:
    name: str
    dataset: Dataset
    kinematics: dict[str, Kinematics]
    encounters: list[Encounter]
    conflicts: evt.ConflictSet
    volumes: bh.VolumeTable
    speeds: dict[tuple[str, str], bh.SpeedProfile]
    yields: bh.YieldRatio
    region_yields: dict[str, bh.YieldRatio]
    encroachment: bh.EncroachmentTable
    mcnemar: bh.TestResult
    sweep: list[evt.ThresholdSweepPoint]
    selection: evt.ThresholdSelection | None
    risk: evt.RiskEstimate | None
    warnings: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def load_scenario(config: StudyConfig, scenario: str) -> tuple[Dataset, dict[str, Kinematics]]:
    """Ingest one scenario and return the smoothed dataset with its kinematics."""
    ds = ingest_csv(
        config.dataset_path(scenario),
        fps=config.fps,
        class_map=config.class_map(),
        scenario_label=scenario,
        observation_seconds=config.observation_seconds(scenario),
        footprint=(config.vehicle_length, config.vehicle_width),
    )
    H = load_homography(config.path("homography")) if config.homography and not config.coordinates_metric else None
    return prepare(
        ds,
        homography=H,
        window_seconds=config.smoothing_window_s,
        diff_half_width=config.diff_half_width,
        stationary_eps=config.stationary_eps,
    )


def conflict_set(encounters, observation_seconds: float) -> evt.ConflictSet:
    return evt.ConflictSet(tuple(e.min_ttac for e in encounters if e.has_ttac), observation_seconds)


def run_sweep(config: StudyConfig, conflicts: evt.ConflictSet) -> list[evt.ThresholdSweepPoint]:
    return evt.threshold_sweep(conflicts, config.u_start, config.u_step, config.u_floor, config.n_min)


def choose_threshold(config: StudyConfig, scenario: str, sweep) -> evt.ThresholdSelection:
    manual = config.manual_u(scenario)
    return evt.select_threshold(
        sweep,
        mode="auto" if manual is None else "manual",
        manual_u=manual,
        rel_tol=config.rel_tol,
        zone_width=config.stable_zone_width,
    )


def analyze_scenario(
    config: StudyConfig,
    scenario: str,
    sections: list[CrossSection],
    regions: Mapping[str, list] | None = None,
) -> ScenarioResult:
    ds, kin = load_scenario(config, scenario)
    radii = {UserClass.PEDESTRIAN: config.pedestrian_radius, UserClass.BICYCLIST: config.bicyclist_radius}
    encounters = analyze_dataset(ds, kin, config.gate_radius, config.min_coexist_s, config.stationary_eps, radii)
    conflicts = conflict_set(encounters, ds.observation_seconds)
    enc_table = bh.encroachment_table(encounters, config.interaction_ttac_cutoff)
    sweep = run_sweep(config, conflicts)

    warnings = []
    selection = risk = None
    try:
        selection = choose_threshold(config, scenario, sweep)
        risk = evt.risk_estimate(selection.point, ds.observation_seconds, config.horizon_for(ds.observation_seconds))
    except InsufficientConflictsError as exc:
        warnings.append(f"risk estimate unavailable: {exc}; a longer survey may provide enough conflicts")
    if selection is not None:
        if selection.point.n < config.reliability_n:
            warnings.append(
                f"fit uses only {selection.point.n} conflicts (< {config.reliability_n}); treat the estimate as indicative"
            )
        if selection.degenerate:
            warnings.append(f"u={selection.point.u:g} is the lowest fittable threshold; no plateau below it")

    return ScenarioResult(
        name=scenario,
        dataset=ds,
        kinematics=kin,
        encounters=encounters,
        conflicts=conflicts,
        volumes=bh.volumes(ds, sections, kin),
        speeds=bh.speed_profiles(ds, sections, kin),
        yields=bh.yield_ratio(encounters, config.pet_cutoff),
        region_yields={
            name: bh.yield_ratio(encounters, config.pet_cutoff, poly) for name, poly in (regions or {}).items()
        },
        encroachment=enc_table,
        mcnemar=bh.mcnemar_midp(enc_table, asymptotic=config.mcnemar_asymptotic),
        sweep=sweep,
        selection=selection,
        risk=risk,
        warnings=warnings,
    )


def relative_change(before: float, after: float) -> float | None:
    """``(after - before) / before``; None when the baseline is zero."""
    return None if before == 0 else (after - before) / before


def _test_or_error(fn, *args, **kwargs) -> dict:
    try:
        return fn(*args, **kwargs).as_dict()
    except (UndefinedTestError, InsufficientDataError) as exc:
        return {"error": str(exc)}


def compare(config: StudyConfig, before: ScenarioResult, after: ScenarioResult) -> dict:
    out: dict = {}
    if before.risk is not None and after.risk is not None:
        rel = relative_change(before.risk.inc_T, after.risk.inc_T)
        out["risk"] = {
            "delta_inc_T": after.risk.inc_T - before.risk.inc_T,
            "percent_change": None if rel is None else 100 * rel,
            "percent_change_label": None if rel is None else f"{100 * rel:+.0f}%",
        }
    else:
        out["risk"] = {"available": False}

    speed_tests = []
    for key in sorted(set(before.speeds) | set(after.speeds)):
        b = before.speeds.get(key)
        a = after.speeds.get(key)
        entry = {"section": key[0], "direction": key[1]}
        if b is None or a is None or b.empty or a.empty:
            entry["error"] = "no crossing speeds in one scenario"
        else:
            entry.update(bh.mann_whitney_u(b.speeds_kmh, a.speeds_kmh, exact_max=config.mw_exact_max).as_dict())
        speed_tests.append(entry)
    out["speed_tests"] = speed_tests

    yield_tests = {"overall": _test_or_error(bh.yield_test, before.yields, after.yields, yates=config.yates)}
    for name in sorted(before.region_yields):
        yield_tests[name] = _test_or_error(
            bh.yield_test, before.region_yields[name], after.region_yields[name], yates=config.yates
        )
    out["yield_tests"] = yield_tests
    return out


def run_study(config: StudyConfig) -> tuple[dict, ScenarioResult, ScenarioResult]:
    sections = load_sections(config.path("sections"))
    regions = load_regions(config.path("regions")) if config.regions else {}
    before = analyze_scenario(config, "before", sections, regions)
    after = analyze_scenario(config, "after", sections, regions)
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": config.as_dict(),
        "before": scenario_block(config, before),
        "after": scenario_block(config, after),
        "comparison": compare(config, before, after),
    }
    return report, before, after


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

def _yield_dict(y: bh.YieldRatio) -> dict:
    return {"yields": y.yields, "total": y.total, "ratio": y.ratio}


def _profile_dict(p: bh.SpeedProfile) -> dict:
    return {
        "section": p.section, "direction": p.direction, "n": p.n, "empty": p.empty,
        "mean_kmh": p.mean, "ci_low_kmh": p.ci_low, "ci_high_kmh": p.ci_high,
    }


def risk_block(result: ScenarioResult) -> dict:
    if result.risk is None:
        return {"available": False, "reason": "insufficient conflicts"}
    sel = result.selection
    d = {"available": True, **result.risk.as_dict()}
    d.update(
        observation_seconds=result.risk.observation_seconds,
        mode=sel.mode,
        degenerate=sel.degenerate,
        stable_zone_u=[p.u for p in sel.stable_zone],
    )
    return d


def scenario_block(config: StudyConfig, r: ScenarioResult) -> dict:
    return {
        "observation_seconds": r.dataset.observation_seconds,
        "trajectories": r.dataset.class_counts(),
        "volumes": [
            {"section": v.section, "direction": v.direction, "group": v.group, "count": v.count, "rate_per_hour": v.rate_per_hour}
            for v in r.volumes.rows
        ],
        "speed_profiles": [_profile_dict(r.speeds[k]) for k in sorted(r.speeds)],
        "encounters": {
            "total": len(r.encounters),
            "with_ttac": len(r.conflicts),
            "interactions": sum(1 for e in r.encounters if e.has_ttac and e.min_ttac < config.interaction_ttac_cutoff),
        },
        "yield": {"overall": _yield_dict(r.yields), "regions": {k: _yield_dict(v) for k, v in sorted(r.region_yields.items())}},
        "encroachment": {**r.encroachment.as_dict(), "test": r.mcnemar.as_dict()},
        "risk": risk_block(r),
        "warnings": list(r.warnings),
    }


def canonical(obj):
    """Round floats to 6 significant digits; non-finite floats become None."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return float(f"{obj:.6g}") if math.isfinite(obj) else None
    if isinstance(obj, Mapping):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if hasattr(obj, "item"):  # numpy scalars
        return canonical(obj.item())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_report(report: dict) -> str:
    return json.dumps(canonical(report), sort_keys=True, indent=2) + "\n"


def write_report(report: dict, path) -> None:
    Path(path).write_text(dumps_report(report), encoding="utf-8")


def _g(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_sweep_csv(sweep, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_CSV_HEADER)
        for p in sweep:
            w.writerow([_g(p.u), p.n, _g(p.k), _g(p.p_crash), _g(p.inc_t), _g(p.fittable)])


def threshold_annotation(selection: evt.ThresholdSelection) -> dict:
    p = selection.point
    return {
        "u": p.u, "n": p.n, "k": p.k, "p_crash": p.p_crash, "inc_t": p.inc_t,
        "mode": selection.mode, "degenerate": selection.degenerate,
        "stable_zone_u": [z.u for z in selection.stable_zone],
    }


def write_speeds_csv(speeds: Mapping[tuple[str, str], bh.SpeedProfile], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("section", "direction", "n", "mean_kmh", "ci_low_kmh", "ci_high_kmh"))
        for key in sorted(speeds):
            p = speeds[key]
            w.writerow([p.section, p.direction, p.n, _g(p.mean), _g(p.ci_low), _g(p.ci_high)])


def write_interactions_csv(config: StudyConfig, r: ScenarioResult, path) -> None:
    """Encounters below the interaction cutoff, flagged against the chosen conflict threshold."""
    rows = [e for e in r.encounters if e.has_ttac and e.min_ttac < config.interaction_ttac_cutoff]
    u = r.selection.point.u if r.selection is not None else None
    flags = ["" if u is None else str(e.min_ttac < u).lower() for e in rows]
    write_encounters_csv(rows, path, {"conflict": flags})


def write_outputs(config: StudyConfig, report: dict, results, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json"]
    write_report(report, written[0])
    for r in results:
        s = r.name
        write_sweep_csv(r.sweep, out / f"sweep_{s}.csv")
        write_interactions_csv(config, r, out / f"interactions_{s}.csv")
        write_encounters_csv(r.encounters, out / f"encounters_{s}.csv")
        write_speeds_csv(r.speeds, out / f"speeds_{s}.csv")
        written += [out / f"{stem}_{s}.csv" for stem in ("sweep", "interactions", "encounters", "speeds")]
        if r.selection is not None:
            path = out / f"threshold_{s}.json"
            path.write_text(json.dumps(canonical(threshold_annotation(r.selection)), sort_keys=True, indent=2) + "\n")
            written.append(path)
    return written


def summary_lines(report: dict) -> list[str]:
    """Short human-readable digest of a report dictionary."""
    lines = []
    for s in SCENARIOS:
        block = report[s]
        risk = block["risk"]
        if risk.get("available"):
            lines.append(
                f"{s}: u={risk['chosen_u']:g} s, n={risk['n']}, k={risk['k']:.3g}, "
                f"P={risk['p_crash']:.3g}, inc_t={risk['inc_t']:.3g}, inc_T={risk['inc_T']:.3g}"
            )
        else:
            lines.append(f"{s}: risk estimate unavailable")
        y = block["yield"]["overall"]
        lines.append(f"{s}: yields {y['yields']}/{y['total']}")
        for w in block["warnings"]:
            lines.append(f"{s}: warning: {w}")
    cmp_risk = report["comparison"]["risk"]
    if cmp_risk.get("percent_change_label"):
        lines.append(f"change in expected crashes: {cmp_risk['percent_change_label']}")
    overall = report["comparison"]["yield_tests"]["overall"]
    if "p_value" in overall:
        lines.append(f"yield chi-squared: {overall['statistic']:.3g} (p={overall['p_value']:.3g})")
    return lines
