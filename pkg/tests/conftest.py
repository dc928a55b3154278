from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

FPS = 25


def _rows(delays, slot_s=20.0, v=8.0, w=1.4):
    """One car (eastbound on y = -1.75) and one pedestrian crossing at x = 0 per slot."""
    rows = []
    for i, d in enumerate(delays):
        t0 = i * slot_s
        f = np.arange(int(t0 * FPS), int((t0 + 12) * FPS))
        t = f / FPS - t0
        for fi, x in zip(f, -40 + v * t):
            rows.append(f"v{i},{fi},{x:.6f},-1.750000,car")
        for fi, y in zip(f, -1.75 - w * (40 / v + d) + w * t):
            rows.append(f"p{i},{fi},0.000000,{y:.6f},ped")
    return rows


def write_study(root: Path, before_delays, after_delays, extra: str = "") -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for name, delays in (("before", before_delays), ("after", after_delays)):
        (root / f"{name}.csv").write_text("\n".join(["id,frame,x,y,label"] + _rows(delays)) + "\n")
    (root / "sections.csv").write_text("code,x1,y1,x2,y2,positive,negative\nS1,-20,7,-20,-7,eastbound,westbound\n")
    cfg = root / "study.toml"
    cfg.write_text(
        'before = "before.csv"\nafter = "after.csv"\nsections = "sections.csv"\n'
        'fps = 25.0\nout_dir = "out"\n' + extra
    )
    return cfg


DELAYS = (0.3, 0.6, 0.9, 1.2, 1.5, 1.8)


@pytest.fixture
def small_study(tmp_path) -> Path:
    return write_study(tmp_path / "study", DELAYS, DELAYS[:4] + (2.4, 2.8))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
