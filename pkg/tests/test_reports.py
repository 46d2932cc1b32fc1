import csv
import json
import math
import os

import numpy as np
import pytest

from config import ExperimentConfig
from fluct_core.constants import SUBCOMMAND_STAGES, Metric, Stage
from fluct_core.convergence_lab import DistanceReport
from fluct_core.exceptions import NumericFailureError, SpecValidationError, UsageError
from reports import ReportBundle, StageError, StageReport, emit_outputs, run_experiment, summary_payload
from reports.emit import REPORT_HEADER, format_cell, json_safe, report_rows
from reports.runner import CHECKPOINT_DIR, config_fingerprint, error_exit_code, load_checkpoint


def drift_only_config(out_dir, **overrides):
    fields = dict(preset="drift-only", n_grid=[2, 4], paths_per_n=300, seed_base=77, output_dir=str(out_dir),
                  tolerances={"min_uncensored": 100}, walk_replicates=200, limit_draws=2000, threads=2)
    fields.update(overrides)
    return ExperimentConfig(**fields)


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.reader(f))


# ------------------------------------------------------------------------------
# bundle verdicts
# ------------------------------------------------------------------------------

def test_empty_bundle_is_noop():
    bundle = ReportBundle(preset_id="drift-only", seed_base=1, stages=(), config={})
    assert bundle.is_empty
    assert (bundle.verdict, bundle.exit_code) == ("no-op", 0)


def test_failed_report_fails_bundle():
    bundle = ReportBundle(preset_id="drift-only", seed_base=1, stages=("verify",), config={})
    bundle.reports.append(StageReport("verify", DistanceReport(Metric.KS, "overshoot", 4, 0.2, 0.1)))
    assert (bundle.verdict, bundle.exit_code) == ("fail", 1)


def test_wasserstein_rows_are_informational():
    bundle = ReportBundle(preset_id="crit-exp-B2", seed_base=5, stages=("converge",), config={})
    bundle.reports.append(StageReport("converge", DistanceReport(Metric.WASSERSTEIN_1, "H_plus(1)", 4, 0.8, math.inf)))
    bundle.reports.append(StageReport("converge", DistanceReport(Metric.TV_INTEGERS, "H_mark(1)", 4, 0.01, 0.05)))
    assert bundle.verdict == "pass"
    assert [row[7] for row in report_rows(bundle)] == ["info", True]

    bundle.reports.append(StageReport("converge", DistanceReport(Metric.TV_INTEGERS, "H_mark(1)", 16, 0.2, 0.05)))
    assert bundle.verdict == "fail"


def test_errors_take_the_largest_exit_code():
    bundle = ReportBundle(preset_id="drift-only", seed_base=1, stages=("verify",), config={})
    bundle.errors.append(StageError("verify", 4, "HorizonTooShortError", "too short", 1))
    bundle.errors.append(StageError("calc", None, "NumericFailureError", "no bracket", 3))
    assert (bundle.verdict, bundle.exit_code) == ("error", 3)


def test_error_exit_codes():
    assert error_exit_code(NumericFailureError("x")) == 3
    assert error_exit_code(UsageError("x")) == 2
    assert error_exit_code(SpecValidationError("x")) == 1


def test_fingerprint_tracks_results_not_output(tmp_path):
    stages = SUBCOMMAND_STAGES["verify"]
    a = config_fingerprint(drift_only_config(tmp_path / "a"), stages, "1")
    assert a == config_fingerprint(drift_only_config(tmp_path / "b", threads=1), stages, "1")
    assert a != config_fingerprint(drift_only_config(tmp_path / "a", seed_base=78), stages, "1")
    assert a != config_fingerprint(drift_only_config(tmp_path / "a"), stages, "2")
    assert a != config_fingerprint(drift_only_config(tmp_path / "a"), SUBCOMMAND_STAGES["all"], "1")


# ------------------------------------------------------------------------------
# runs
# ------------------------------------------------------------------------------

def test_calc_run_of_drift_only(tmp_path):
    bundle = run_experiment(drift_only_config(tmp_path), SUBCOMMAND_STAGES["calc"])
    assert [row["n"] for row in bundle.analytic] == [2, 4, 0]
    first = bundle.analytic[0]
    assert first["psi_1"] == pytest.approx(1.0)
    assert first["phi_1"] == pytest.approx(1.0)
    assert first["kill"] == pytest.approx(1.0)
    assert first["criticality"] == "subcritical"
    assert bundle.conditions and all(t.passed for t in bundle.condition_trends)
    assert not bundle.reports and not bundle.index_rows
    assert (bundle.verdict, bundle.exit_code) == ("pass", 0)
    assert not os.path.exists(tmp_path / CHECKPOINT_DIR)


def test_full_run_of_drift_only(tmp_path):
    bundle = run_experiment(drift_only_config(tmp_path), SUBCOMMAND_STAGES["all"], version="test")
    assert not bundle.errors
    assert [row.n for row in bundle.index_rows] == [2, 4]
    stages = {entry.stage for entry in bundle.reports}
    assert stages == {"verify", "converge"}
    labels = {entry.report.label for entry in bundle.reports}
    assert {"L(inf)", "kappa*phi ladder", "kappa*phi walk", "limit subordinator", "H_mark(1)"} <= labels
    assert [w["alpha_hat"] for w in bundle.walk_rows] == [1.0, 1.0]
    assert [w["alpha_exact"] for w in bundle.walk_rows] == [1.0, 1.0]
    # drift-only paths have no jumps, so there is nothing to dump
    assert bundle.path_rows == [] and bundle.ladder_rows == []
    assert bundle.verdict == "pass"
    assert bundle.runtime["version"] == "test"
    assert os.path.exists(tmp_path / CHECKPOINT_DIR / "n00002.json")


def test_resumed_run_matches_fresh_run(tmp_path):
    config = drift_only_config(tmp_path)
    stages = SUBCOMMAND_STAGES["verify"]
    fresh = run_experiment(config, stages)
    resumed = run_experiment(config, stages)
    assert report_rows(resumed) == report_rows(fresh)
    assert resumed.walk_rows == fresh.walk_rows
    assert resumed.index_rows == fresh.index_rows
    # a different seed base never picks up the old checkpoints
    fingerprint = config_fingerprint(config.model_copy(update={"seed_base": 78}), stages)
    assert load_checkpoint(str(tmp_path), fingerprint, 2) is None
    assert load_checkpoint(str(tmp_path), config_fingerprint(config, stages), 2) is not None


def test_simulate_dumps_paths(tmp_path):
    config = ExperimentConfig(preset="crit-exp-B1-theta2", n_grid=[2], paths_per_n=5, dump_paths=5,
                              output_dir=str(tmp_path), threads=1)
    bundle = run_experiment(config, SUBCOMMAND_STAGES["all"][:3])
    # replicates whose clock needs no record produce empty paths
    assert bundle.path_rows
    assert {row[1] for row in bundle.path_rows} <= set(range(5))
    assert bundle.ladder_rows
    assert all(row[0] == 2 for row in bundle.ladder_rows)
    # ladder points are records of the dumped paths, overshoot first then undershoot
    assert all(row[4] > 0 and row[5] >= 0 for row in bundle.ladder_rows)


def test_short_horizon_is_recorded_as_error(tmp_path):
    config = ExperimentConfig(preset="crit-exp-B1-theta2", n_grid=[4], paths_per_n=20, horizon=0.01,
                              output_dir=str(tmp_path), threads=1)
    bundle = run_experiment(config, SUBCOMMAND_STAGES["converge"])
    assert [(e.stage, e.n, e.error) for e in bundle.errors] == [("converge", 4, "HorizonTooShortError")]
    assert (bundle.verdict, bundle.exit_code) == ("error", 1)
    # the analytic stage still ran
    assert bundle.analytic


# ------------------------------------------------------------------------------
# emitters
# ------------------------------------------------------------------------------

def test_format_cell():
    assert format_cell(True) == "true"
    assert format_cell(0.1) == "0.10000000000000001"
    assert format_cell(np.float64(0.5)) == "0.5"
    assert format_cell(np.int64(3)) == "3"
    assert format_cell("KS") == "KS"


def test_json_safe_replaces_non_finite():
    assert json_safe({"a": math.inf, "b": [math.nan, -math.inf, 1.5], "c": np.float64(2.0)}) == \
        {"a": "inf", "b": ["nan", "-inf", 1.5], "c": 2.0}


def test_emit_outputs(tmp_path):
    bundle = run_experiment(drift_only_config(tmp_path), SUBCOMMAND_STAGES["verify"])
    out = tmp_path / "out"
    written = emit_outputs(bundle, str(out), ["csv", "json"])
    names = {os.path.basename(p) for p in written}
    assert {"reports.csv", "analytic.csv", "conditions.csv", "index.csv", "walk.csv", "summary.json",
            "runtime.json"} <= names
    assert "paths.csv" not in names and "errors.csv" not in names

    rows = read_csv(out / "reports.csv")
    assert tuple(rows[0]) == REPORT_HEADER
    assert len(rows) == len(bundle.reports) + 1
    assert all(row[0] == "verify" and row[1] == "drift-only" and row[-1] == "77" for row in rows[1:])
    assert {row[7] for row in rows[1:]} <= {"true", "false", "info"}

    with open(out / "summary.json", encoding="utf-8") as f:
        summary = json.load(f)
    assert summary == json.loads(json.dumps(json_safe(summary_payload(bundle))))
    assert summary["verdict"] == bundle.verdict
    assert summary["generator"].startswith("numpy.random.Philox")
    assert summary["analytic"][-1]["d_n"] == "nan"


def test_emit_csv_only(tmp_path):
    bundle = run_experiment(drift_only_config(tmp_path), SUBCOMMAND_STAGES["calc"])
    written = emit_outputs(bundle, str(tmp_path / "csv"), ["csv"])
    assert not any(p.endswith(".json") for p in written)
    with open(written[0], "rb") as f:
        assert b"\r\n" not in f.read()
