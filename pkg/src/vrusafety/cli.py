"""Command-line entry point: ``vrusafety {ingest,analyze,sweep,report}``.

Exit codes: 0 success, 1 error, 2 finished with warnings.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import report as rp
from .config import StudyConfig, load_config
from .errors import InsufficientConflictsError, VruSafetyError
from .surrogate import analyze_dataset
from .trajectory import UserClass, write_csv

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2

log = logging.getLogger("vrusafety")


def _out_dir(args, config: StudyConfig) -> Path:
    return Path(args.out) if args.out else config.path("out_dir")


def _scenarios(args) -> tuple[str, ...]:
    return (args.scenario,) if args.scenario else rp.SCENARIOS


def _write_kinematics(kin, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("id", "frame", "x", "y", "vx", "vy", "speed"))
        for tid in sorted(kin):
            k = kin[tid]
            for f, p, v, s in zip(k.frames, k.position, k.velocity, k.speed):
                w.writerow([tid, int(f), f"{p[0]:.6f}", f"{p[1]:.6f}", f"{v[0]:.6f}", f"{v[1]:.6f}", f"{s:.6f}"])


def cmd_ingest(args, config: StudyConfig) -> int:
    out = _out_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    for s in _scenarios(args):
        ds, kin = rp.load_scenario(config, s)
        write_csv(ds, out / f"normalized_{s}.csv")
        _write_kinematics(kin, out / f"kinematics_{s}.csv")
        counts = ", ".join(f"{k}={v}" for k, v in ds.class_counts().items())
        print(f"{s}: {len(ds)} trajectories ({counts}), {ds.observation_seconds:g} s observed")
    return EXIT_OK


def cmd_analyze(args, config: StudyConfig) -> int:
    report, before, after = rp.run_study(config)
    out = _out_dir(args, config)
    rp.write_outputs(config, report, (before, after), out)
    for line in rp.summary_lines(report):
        print(line)
    print(f"report written to {out / 'report.json'}")
    return EXIT_WARN if before.warnings or after.warnings else EXIT_OK


def cmd_sweep(args, config: StudyConfig) -> int:
    out = _out_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for s in _scenarios(args):
        ds, kin = rp.load_scenario(config, s)
        radii = {UserClass.PEDESTRIAN: config.pedestrian_radius, UserClass.BICYCLIST: config.bicyclist_radius}
        encounters = analyze_dataset(ds, kin, config.gate_radius, config.min_coexist_s, config.stationary_eps, radii)
        sweep = rp.run_sweep(config, rp.conflict_set(encounters, ds.observation_seconds))
        rp.write_sweep_csv(sweep, out / f"sweep_{s}.csv")
        try:
            sel = rp.choose_threshold(config, s, sweep)
        except InsufficientConflictsError as exc:
            print(
                f"{s}: no fittable threshold ({exc}). Extend the survey duration to collect more conflicts.",
                file=sys.stderr,
            )
            return EXIT_ERROR
        ann = rp.canonical(rp.threshold_annotation(sel))
        (out / f"threshold_{s}.json").write_text(json.dumps(ann, sort_keys=True, indent=2) + "\n")
        print(f"{s}: {sel.mode} threshold u={sel.point.u:g} s (n={sel.point.n}, k={sel.point.k:.3g})")
        if sel.point.n < config.reliability_n or sel.degenerate:
            status = EXIT_WARN
    return status


def cmd_report(args, config: StudyConfig) -> int:
    path = _out_dir(args, config) / "report.json"
    if not path.exists():
        print(f"{path} not found; run 'analyze' first", file=sys.stderr)
        return EXIT_ERROR
    report = json.loads(path.read_text(encoding="utf-8"))
    for line in rp.summary_lines(report):
        print(line)
    return EXIT_WARN if report["before"]["warnings"] or report["after"]["warnings"] else EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "analyze": cmd_analyze, "sweep": cmd_sweep, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vrusafety", description="Before/after vehicle-VRU safety study.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "parse, transform and smooth both scenarios",
        "analyze": "run the full study and write report.json plus CSV sidecars",
        "sweep": "threshold sweep and selected threshold per scenario",
        "report": "print a summary of an existing report.json",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="study config (TOML)")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        if name in ("ingest", "sweep"):
            p.add_argument("--scenario", choices=rp.SCENARIOS, help="restrict to one scenario")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        config = load_config(args.config)
        return COMMANDS[args.command](args, config)
    except (VruSafetyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
