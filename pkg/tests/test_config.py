import argparse
import json

import pytest

from config import (ExperimentConfig, build_config, parse_arguments, resolve_threads, stages_for,
                    validate_formats, validate_n_grid, validate_seed)
from fluct_core.constants import Stage
from fluct_core.exceptions import UnsupportedFamilyError, UsageError


def test_validate_n_grid_sorts_and_dedups():
    assert validate_n_grid("64,4,16,4") == [4, 16, 64]
    assert validate_n_grid("[2,8]") == [2, 8]
    for bad in ("0,4", "a,b", ""):
        with pytest.raises(argparse.ArgumentTypeError):
            validate_n_grid(bad)


def test_validate_seed_accepts_hex():
    assert validate_seed("0xff") == 255
    assert validate_seed("0xFFFFFFFFFFFFFFFF") == 2 ** 64 - 1
    for bad in ("-1", "0x1FFFFFFFFFFFFFFFF", "seed"):
        with pytest.raises(argparse.ArgumentTypeError):
            validate_seed(bad)


def test_validate_formats():
    assert validate_formats("json,CSV") == ["csv", "json"]
    with pytest.raises(argparse.ArgumentTypeError):
        validate_formats("xml")


def test_defaults():
    config = ExperimentConfig()
    assert config.preset == "crit-exp-B1-theta2"
    assert config.n_grid == [4, 16, 64]
    assert config.paths_per_n == 2000
    assert config.seed_base == 20240601
    assert config.tolerance_set().ks_coefficient == 1.63


def test_unknown_fields_and_tolerances_rejected():
    with pytest.raises(ValueError):
        ExperimentConfig(bogus=1)
    with pytest.raises(ValueError):
        ExperimentConfig(tolerances={"not_a_tolerance": 1.0})


def test_assumption_override():
    config = ExperimentConfig(preset="crit-exp-B1-theta2", assumption={"kind": "B2", "kappa": 3.0})
    preset = config.resolved_preset()
    assert preset.assumption.value == "B2"
    assert preset.kappa == 3.0


def test_fingerprint_ignores_output_location():
    a = ExperimentConfig(output_dir="one", threads=2)
    b = ExperimentConfig(output_dir="two", formats=["csv"])
    assert a.fingerprint_fields() == b.fingerprint_fields()
    assert a.fingerprint_fields() != ExperimentConfig(seed_base=1).fingerprint_fields()


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps({"preset": "drift-only", "n_grid": [2, 4], "paths_per_n": 50,
                                "tolerances": {"min_uncensored": 10}}))
    args = parse_arguments(["converge", "--config", str(path), "--paths", "80", "--seed", "0x10"])
    config = build_config(args)
    assert config.preset == "drift-only"
    assert config.n_grid == [2, 4]
    assert config.paths_per_n == 80
    assert config.seed_base == 16
    assert config.tolerance_set().min_uncensored == 10


def test_bad_config_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("[1, 2")
    with pytest.raises(UsageError):
        build_config(parse_arguments(["calc", "--config", str(path)]))
    with pytest.raises(UsageError):
        build_config(parse_arguments(["calc", "--config", str(tmp_path / "missing.json")]))


def test_unknown_preset_is_unsupported_family():
    with pytest.raises(UnsupportedFamilyError) as excinfo:
        build_config(parse_arguments(["calc", "--preset", "heavy-tail"]))
    assert "drift-only" in str(excinfo.value)


def test_missing_subcommand_exits_with_usage():
    with pytest.raises(SystemExit) as excinfo:
        parse_arguments([])
    assert excinfo.value.code == 2
    with pytest.raises(SystemExit) as excinfo:
        parse_arguments(["-h"])
    assert excinfo.value.code == 0


def test_stages_for_subcommands():
    assert stages_for("calc") == (Stage.CALC,)
    assert stages_for("verify") == (Stage.CALC, Stage.VERIFY)
    assert len(stages_for("all")) == len(Stage)


def test_resolve_threads(monkeypatch):
    monkeypatch.setattr("config.psutil.cpu_count", lambda logical=True: 8)
    monkeypatch.delenv("FLUCTLAB_THREADS", raising=False)
    assert resolve_threads(None, 100) == 8
    assert resolve_threads(3, 100) == 3
    assert resolve_threads(None, 2) == 2
    monkeypatch.setenv("FLUCTLAB_THREADS", "4")
    assert resolve_threads(None, 100) == 4
    monkeypatch.setenv("FLUCTLAB_THREADS", "many")
    with pytest.raises(UsageError):
        resolve_threads(None, 100)
