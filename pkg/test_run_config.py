#!/usr/bin/env python3
"""Tests for run configuration files and ablation cases."""

import json

import pytest
from pydantic import ValidationError

from run_config import CASES, RunConfig, load_config_file
from utils import ConfigConflict, DatasetIOError, InvalidArgument


def test_defaults():
    config = RunConfig()
    assert config.case == "A"
    assert config.learning_rate == 1.5e-4
    assert config.schedule().phase1_steps == 1000
    assert config.shadow().kappa == 30.0 and config.shadow().mu == -0.2
    assert config.thresholds().lambda_sc == 0.03
    assert config.network().n_season_classes == 4


def test_cases():
    base = RunConfig()
    assert base.for_case("a").model_dump() == base.model_dump()
    assert base.for_case("B").shading == "snerf"
    assert base.for_case("C").robust_loss is False
    d = base.for_case("D")
    assert d.schedule().phase1_steps == 0 and d.lambda_ds == 0.0
    assert base.for_case("E").n_season_classes == 1
    assert [base.for_case(c).case for c in CASES] == list(CASES)
    with pytest.raises(InvalidArgument):
        base.for_case("F")


def test_case_e_conflicts_with_explicit_class_count():
    with pytest.raises(ConfigConflict):
        RunConfig(n_season_classes=3).for_case("E")
    assert RunConfig(n_season_classes=1).for_case("E").n_season_classes == 1


def test_load_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# small run\ncase = C\nlearning-rate = 5e-5\ntotal_steps = 40  # quick\nbatch_norm = off\n")
    config = load_config_file(path, seed=7, total_steps=None)
    assert (config.case, config.learning_rate, config.total_steps, config.batch_norm, config.seed) == \
        ("C", 5e-5, 40, False, 7)
    assert load_config_file(None).case == "A"


def test_load_config_file_errors(tmp_path):
    with pytest.raises(DatasetIOError):
        load_config_file(tmp_path / "missing.cfg")
    unknown = tmp_path / "unknown.cfg"
    unknown.write_text("learning_rat = 1e-4\n")
    with pytest.raises(ValidationError):
        load_config_file(unknown)
    out_of_range = tmp_path / "range.cfg"
    out_of_range.write_text("total_steps = 1\n")
    with pytest.raises(ValidationError):
        load_config_file(out_of_range)
    duplicate = tmp_path / "dup.cfg"
    duplicate.write_text("seed = 1\nseed = 2\n")
    with pytest.raises(InvalidArgument):
        load_config_file(duplicate)


def test_snapshot_round_trip(tmp_path):
    """A config.json snapshot loads back through the same entry point as text configs."""
    config = RunConfig(seed=3, kappa=25.0).for_case("B")
    path = config.snapshot(tmp_path / "run" / "config.json")
    assert json.loads(path.read_text())["shading"] == "snerf"
    assert load_config_file(path).model_dump() == config.model_dump()
    assert load_config_file(path, seed=9).seed == 9
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(DatasetIOError, match="malformed"):
        load_config_file(bad)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]")
    with pytest.raises(DatasetIOError, match="JSON object"):
        load_config_file(listed)


def test_save_text_round_trip(tmp_path):
    config = RunConfig(seed=4, learning_rate=3.3e-5, data_dir="data/town").for_case("C")
    path = config.save_text(tmp_path / "best.cfg", header="best of 2 trials\nscore 0.5")
    lines = path.read_text().splitlines()
    assert lines[:2] == ["# best of 2 trials", "# score 0.5"]
    assert "robust_loss = false" in lines
    assert load_config_file(path).model_dump() == config.model_dump()


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
