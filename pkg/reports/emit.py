"""
Writers for the run outputs.

    reports.csv      one row per distance report (stage, preset, n, metric, ...)
    trends.csv       endpoint trend verdicts of tracked marginals
    analytic.csv     psi / eta / phi / ladder rates per n plus the limit row
    conditions.csv   characteristic gaps per n
    index.csv        per-n simulation summary
    walk.csv         Fristedt estimates of the grid walks
    paths.csv        dumped rescaled paths (simulate)
    ladders.csv      dumped ladder points (ladder)
    errors.csv       captured stage errors
    summary.json     verdict, config echo, reports and trends
    runtime.json     elapsed time, memory, CPU count, versions

CSV files are UTF-8 with LF line endings, one header row, reals at 17
significant digits. Only non-timing content is deterministic.
"""

import csv
import json
import logging
import math
import os
from typing import Iterable, List, Sequence

from fluct_core.constants import CSV_FLOAT_FORMAT, GENERATOR_NAME

from .runner import ReportBundle

logger = logging.getLogger(__name__)


def format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, CSV_FLOAT_FORMAT)
    if hasattr(value, "item"):  # numpy scalars
        return format_cell(value.item())
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    logger.info(f"emit.write: {path}")
    return path


def json_safe(value):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def write_json(path: str, payload: dict) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(json_safe(payload), f, sort_keys=True, indent=2, allow_nan=False)
        f.write("\n")
    logger.info(f"emit.write: {path}")
    return path


# pass cell of rows without a finite threshold
PASS_INFORMATIONAL = "info"

REPORT_HEADER = ("stage", "preset", "n", "metric", "label", "value", "threshold", "pass", "N", "seed_base")
TREND_HEADER = ("label", "metric", "first_n", "last_n", "first_value", "last_value", "pass")
ANALYTIC_HEADER = ("n", "d_n", "criticality", "psi_1", "eta", "phi_1", "mu_plus", "lambda", "kill", "mark_rate")
CONDITION_HEADER = ("condition", "n", "value", "limit", "gap")
INDEX_HEADER = ("n", "d_n", "alpha", "replicates", "horizon_censored", "killed", "records", "events")
WALK_HEADER = ("n", "k", "alpha_hat", "se", "k_max", "tail", "replicates", "alpha_exact")
PATH_HEADER = ("n", "replicate", "time", "size", "mark")
LADDER_HEADER = ("n", "replicate", "record_time", "local_time", "overshoot", "undershoot", "mark")
ERROR_HEADER = ("stage", "n", "error", "message")


def report_rows(bundle: ReportBundle) -> List[tuple]:
    rows = []
    for entry in bundle.reports:
        r = entry.report
        passed = PASS_INFORMATIONAL if r.informational else r.passed
        rows.append((entry.stage, bundle.preset_id, r.n_index, r.metric.value, r.label, float(r.value),
                     float(r.threshold), passed, sum(r.sample_sizes), bundle.seed_base))
    return rows


def summary_payload(bundle: ReportBundle) -> dict:
    return {
        "verdict": bundle.verdict,
        "exit_code": bundle.exit_code,
        "preset": bundle.preset_id,
        "seed_base": bundle.seed_base,
        "stages": list(bundle.stages),
        "generator": GENERATOR_NAME,
        "config": bundle.config,
        "reports": [dict(entry.report.as_dict(), stage=entry.stage) for entry in bundle.reports],
        "trends": [t._asdict() for t in bundle.trends],
        "condition_trends": [t._asdict() for t in bundle.condition_trends],
        "analytic": bundle.analytic,
        "walk": bundle.walk_rows,
        "errors": [{"stage": e.stage, "n": e.n, "error": e.error, "message": e.message} for e in bundle.errors],
    }


def emit_outputs(bundle: ReportBundle, out_dir: str, formats: Sequence[str]) -> List[str]:
    """
    Write the bundle in the requested formats.

    Returns:
        Paths written, in order

    Raises:
        OSError: If the output directory or a file cannot be written
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def target(name):
        return os.path.join(out_dir, name)

    if "csv" in formats:
        written.append(write_csv(target("reports.csv"), REPORT_HEADER, report_rows(bundle)))
        tables = (
            ("trends.csv", TREND_HEADER, [tuple(t) for t in bundle.trends]),
            ("analytic.csv", ANALYTIC_HEADER, [tuple(row[k] for k in ANALYTIC_HEADER) for row in bundle.analytic]),
            ("conditions.csv", CONDITION_HEADER, [tuple(c) for c in bundle.conditions]),
            ("index.csv", INDEX_HEADER, [tuple(r) for r in bundle.index_rows]),
            ("walk.csv", WALK_HEADER, [tuple(w[k] for k in WALK_HEADER) for w in bundle.walk_rows]),
            ("paths.csv", PATH_HEADER, bundle.path_rows),
            ("ladders.csv", LADDER_HEADER, bundle.ladder_rows),
            ("errors.csv", ERROR_HEADER, [(e.stage, "" if e.n is None else e.n, e.error, e.message)
                                          for e in bundle.errors]),
        )
        for name, header, rows in tables:
            if rows:
                written.append(write_csv(target(name), header, rows))

    if "json" in formats:
        written.append(write_json(target("summary.json"), summary_payload(bundle)))
        written.append(write_json(target("runtime.json"), bundle.runtime))
    return written
