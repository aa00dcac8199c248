# tests/test_settings.py
import json

import pytest

from src.config.settings import DEFAULTS, Settings


def write(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def test_missing_and_empty_files_use_defaults(tmp_path):
    s = Settings.load(tmp_path / "settings.json")
    assert s.warnings == []
    assert s.as_dict()["solver"] == DEFAULTS["solver"]
    Settings.reset()
    empty = tmp_path / "empty.json"
    empty.write_text("  \n", encoding="utf-8")
    assert Settings.load(empty).warnings == []


def test_unparsable_file_warns(tmp_path):
    bad = tmp_path / "settings.json"
    bad.write_text("{not json", encoding="utf-8")
    s = Settings.load(bad)
    assert any("could not be parsed" in w for w in s.warnings)
    assert s.threads == 1


def test_load_is_a_singleton(tmp_path):
    a = Settings.load(tmp_path / "settings.json")
    assert Settings.load(tmp_path / "other.json") is a


def test_wrong_types_and_ranges_fall_back(tmp_path):
    path = write(tmp_path / "settings.json", {
        "simulation": {"trials": "many", "encoder": "greedy", "master_seed": 5.0},
        "parallel": {"threads": 0},
        "output": {"log_level": "LOUD", "float_format": ".6g"},
        "extra": 1,
        "converse": {"colour": "blue"},
    })
    s = Settings.load(path)
    assert s.simulation["trials"] == DEFAULTS["simulation"]["trials"]
    assert s.simulation["encoder"] == "exact"
    assert s.simulation["master_seed"] == 5
    assert s.threads == 1
    assert s.output["log_level"] == "WARNING"
    assert s.output["float_format"] == ".6g"
    assert any("converse.colour" in w for w in s.warnings)
    assert len(s.warnings) >= 4


def test_rejected_solver_section(tmp_path):
    s = Settings.load(write(tmp_path / "settings.json", {"solver": {"step_decay": 2.0}}))
    assert s.solver == DEFAULTS["solver"]
    assert any("solver" in w for w in s.warnings)


def test_environment_overrides_threads(tmp_path, monkeypatch):
    monkeypatch.setenv("RDP_THREADS", "4")
    assert Settings.load(tmp_path / "settings.json").threads == 4
    Settings.reset()
    monkeypatch.setenv("RDP_THREADS", "zero")
    s = Settings.load(tmp_path / "settings.json")
    assert s.threads == 1
    assert any("RDP_THREADS" in w for w in s.warnings)


def test_solver_config_overrides(tmp_path):
    s = Settings.load(write(tmp_path / "settings.json", {"solver": {"constraint_tol": 1e-5}}))
    assert s.solver_config().constraint_tol == 1e-5
    assert s.solver_config(constraint_tol=None).constraint_tol == 1e-5
    assert s.solver_config(constraint_tol=1e-3).constraint_tol == 1e-3
    with pytest.raises(ValueError):
        s.solver_config(primal_tol=-1.0)


def test_paths_resolve_next_to_settings(tmp_path):
    s = Settings.load(write(tmp_path / "settings.json", {"app": {"problems_path": "cases"}}))
    assert s.problems_dir == tmp_path / "cases"


def test_save_round_trip(tmp_path):
    path = write(tmp_path / "settings.json", {"soft_covering": {"seed_count": 12}})
    Settings.load(path).save()
    Settings.reset()
    again = Settings.load(path)
    assert again.soft_covering["seed_count"] == 12
    assert again.warnings == []
    assert json.loads(path.read_text(encoding="utf-8"))["parallel"]["threads"] == 1
