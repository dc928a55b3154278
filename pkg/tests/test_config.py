from __future__ import annotations

from pathlib import Path

import pytest

from vrusafety.config import StudyConfig, load_config, load_regions
from vrusafety.errors import ConfigError


def _cfg(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text('before = "b.csv"\nafter = "a.csv"\nsections = "s.csv"\n' + text)
    return p


def test_defaults_and_relative_paths(tmp_path):
    cfg = load_config(_cfg(tmp_path, ""))
    assert cfg.fps == 25.0 and cfg.u_start == 3.0 and cfg.u_step == 0.05 and cfg.n_min == 3
    assert cfg.pet_cutoff == 5.0 and cfg.interaction_ttac_cutoff == 4.0
    assert cfg.dataset_path("before") == tmp_path / "b.csv"
    assert cfg.path("homography") is None
    assert cfg.horizon_for(3600.0) == 200 * 3600.0


def test_overrides_and_explicit_horizon(tmp_path):
    cfg = load_config(_cfg(tmp_path, "horizon_seconds = 31536000\nmanual_u_before = 1.6\n"), fps=30.0)
    assert cfg.fps == 30.0
    assert cfg.horizon_for(3600.0) == 31536000
    assert cfg.manual_u("before") == 1.6 and cfg.manual_u("after") is None


def test_absolute_path_kept(tmp_path):
    cfg = load_config(_cfg(tmp_path, 'homography = "/abs/h.txt"\n'))
    assert cfg.path("homography") == Path("/abs/h.txt")


@pytest.mark.parametrize(
    "text",
    ["bogus = 1\n", "[table]\nx = 1\n", "fps = -1\n", "u_start = 0.4\n", "n_min = 0\n", "fps = \n"],
)
def test_rejects_bad_config(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_cfg(tmp_path, text))


def test_missing_required_and_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('before = "b.csv"\n')
    with pytest.raises(ConfigError, match="after"):
        load_config(p)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")


def test_class_map_and_labels(tmp_path):
    cfg = load_config(_cfg(tmp_path, 'pedestrian_labels = ["walker"]\n'))
    cm = cfg.class_map()
    assert cm["walker"] == "pedestrian" and cm["car"] == "motor_vehicle" and "ped" not in cm
    assert cfg.as_dict()["pedestrian_labels"] == ["walker"]


def test_unknown_scenario():
    with pytest.raises(ConfigError):
        StudyConfig("b", "a", "s").dataset_path("during")


def test_load_regions(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("name,x,y\nzb,0,0\nzb,1,0\nzb,1,1\n# comment\nza,0,0\nza,2,0\nza,0,2\n")
    regions = load_regions(p)
    assert list(regions) == ["za", "zb"]
    assert regions["zb"] == [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]
    p.write_text("name,x,y\nq,0,0\nq,1,1\n")
    with pytest.raises(ConfigError):
        load_regions(p)
