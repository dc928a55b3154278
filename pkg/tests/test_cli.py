from __future__ import annotations

import json

import pytest
from conftest import DELAYS, write_study

from vrusafety.cli import EXIT_ERROR, EXIT_OK, EXIT_WARN, main


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_ingest_ok(capsys, small_study, tmp_path):
    code, out, _ = _run(capsys, "ingest", "--config", str(small_study), "--out", str(tmp_path / "o"))
    assert code == EXIT_OK
    assert "before: 12 trajectories" in out and "pedestrian=6" in out
    assert (tmp_path / "o" / "normalized_before.csv").exists()
    assert (tmp_path / "o" / "kinematics_after.csv").exists()


def test_ingest_missing_file(capsys, small_study):
    (small_study.parent / "after.csv").unlink()
    code, _, err = _run(capsys, "ingest", "--config", str(small_study))
    assert code == EXIT_ERROR and "after.csv" in err


def test_ingest_unknown_label(capsys, small_study):
    p = small_study.parent / "before.csv"
    p.write_text(p.read_text().replace(",car\n", ",hovercraft\n", 1))
    code, _, err = _run(capsys, "ingest", "--config", str(small_study), "--scenario", "before")
    assert code == EXIT_ERROR and "hovercraft" in err


def test_missing_config(capsys, tmp_path):
    code, _, err = _run(capsys, "analyze", "--config", str(tmp_path / "none.toml"))
    assert code == EXIT_ERROR and "none.toml" in err


def test_analyze_writes_report_and_sidecars(capsys, small_study):
    code, out, _ = _run(capsys, "analyze", "--config", str(small_study))
    assert code == EXIT_WARN  # n = 6 < 13
    out_dir = small_study.parent / "out"
    report = json.loads((out_dir / "report.json").read_text())
    assert report["before"]["risk"]["available"] and report["before"]["risk"]["n"] == 6
    assert report["before"]["warnings"]
    for name in ("sweep_before.csv", "encounters_after.csv", "speeds_before.csv", "interactions_after.csv"):
        assert (out_dir / name).exists()
    code, out, _ = _run(capsys, "report", "--config", str(small_study))
    assert code == EXIT_WARN and "change in expected crashes" in out


def test_self_comparison_is_zero(capsys, tmp_path):
    cfg = write_study(tmp_path / "s", DELAYS, DELAYS)
    _run(capsys, "analyze", "--config", str(cfg))
    report = json.loads((tmp_path / "s" / "out" / "report.json").read_text())
    assert report["comparison"]["risk"]["percent_change"] == 0
    assert report["before"]["risk"] == report["after"]["risk"]


def test_zero_encounters_marks_risk_unavailable(capsys, tmp_path):
    cfg = write_study(tmp_path / "s", DELAYS, DELAYS)
    rows = ["id,frame,x,y,label"]
    rows += [f"v,{f},{-40 + 0.32 * f:.4f},-1.75,car" for f in range(250)]
    rows += [f"p,{f},{0.05 * f:.4f},80,ped" for f in range(250)]
    (tmp_path / "s" / "after.csv").write_text("\n".join(rows) + "\n")
    code, _, _ = _run(capsys, "analyze", "--config", str(cfg))
    assert code == EXIT_WARN
    report = json.loads((tmp_path / "s" / "out" / "report.json").read_text())
    assert report["after"]["risk"]["available"] is False
    assert any("unavailable" in w for w in report["after"]["warnings"])
    assert report["comparison"]["risk"] == {"available": False}
    assert report["after"]["volumes"]  # behaviour sections still populated


def test_report_is_byte_identical(capsys, small_study, tmp_path):
    _run(capsys, "analyze", "--config", str(small_study), "--out", str(tmp_path / "a"))
    _run(capsys, "analyze", "--config", str(small_study), "--out", str(tmp_path / "b"))
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_sweep_empty_conflicts_fails_with_guidance(capsys, tmp_path):
    cfg = write_study(tmp_path / "s", (9.0,), (9.0,))
    code, _, err = _run(capsys, "sweep", "--config", str(cfg), "--scenario", "before")
    assert code == EXIT_ERROR and "survey duration" in err


def test_sweep_manual_threshold_annotation(capsys, tmp_path):
    cfg = write_study(tmp_path / "s", DELAYS, DELAYS, extra="manual_u_before = 2.5\n")
    code, out, _ = _run(capsys, "sweep", "--config", str(cfg), "--scenario", "before")
    assert code == EXIT_WARN and "manual threshold u=2.5" in out
    ann = json.loads((tmp_path / "s" / "out" / "threshold_before.json").read_text())
    assert ann["u"] == 2.5 and ann["mode"] == "manual"


def test_report_without_analyze(capsys, small_study):
    code, _, err = _run(capsys, "report", "--config", str(small_study))
    assert code == EXIT_ERROR and "analyze" in err


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
