"""
Experiment runner: drives the selected stages over the n grid and collects
everything the emitters need into a ReportBundle.

Per-index Monte Carlo results are checkpointed as JSON in the output
directory, keyed by a fingerprint of the result-determining configuration,
so an interrupted run resumes without redoing finished indices.
"""

import hashlib
import json
import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import psutil
import scipy

from config import ExperimentConfig, resolve_threads
from fluct_core.constants import (GENERATOR_NAME, VERDICT_ERROR, VERDICT_FAIL, VERDICT_NOOP, VERDICT_PASS,
                                  ExitCode, Stage, Tolerances)
from fluct_core.convergence_lab import (ConditionRow, ConditionTrend, DistanceReport, IndexContext, IndexOutcome,
                                        IndexRow, TrendVerdict, evaluate_index, family_members, index_context,
                                        js_condition_check, limit_sampler_check, merge_index_samples,
                                        replicate_chunks, replicate_path, simulate_index, trend_verdicts,
                                        walk_identity_check)
from fluct_core.exceptions import FluctLabError, NumericFailureError, UsageError
from fluct_core.ladder_decomposition import build_ladder
from fluct_core.levy_calculus import (LimitSpec, criticality, laplace_exponent, ladder_measure, limit_parameters,
                                      phi_inverse)
from fluct_core.path_simulator import path_rows
from fluct_core.presets import Preset
from fluct_core.seeds import experiment_seed
from progress_logger import progress_logger

logger = logging.getLogger(__name__)

CHECKPOINT_DIR = "checkpoints"
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class StageReport:
    """A distance report tagged with the stage that produced it."""
    stage: str
    report: DistanceReport


@dataclass(frozen=True)
class StageError:
    stage: str
    n: Optional[int]
    error: str
    message: str
    exit_code: int


@dataclass
class ReportBundle:
    """Everything one run produced, in deterministic order."""
    preset_id: str
    seed_base: int
    stages: Tuple[str, ...]
    config: dict
    analytic: List[dict] = field(default_factory=list)
    conditions: List[ConditionRow] = field(default_factory=list)
    condition_trends: List[ConditionTrend] = field(default_factory=list)
    index_rows: List[IndexRow] = field(default_factory=list)
    reports: List[StageReport] = field(default_factory=list)
    trends: List[TrendVerdict] = field(default_factory=list)
    walk_rows: List[dict] = field(default_factory=list)
    path_rows: List[tuple] = field(default_factory=list)
    ladder_rows: List[tuple] = field(default_factory=list)
    errors: List[StageError] = field(default_factory=list)
    runtime: dict = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return not (self.analytic or self.conditions or self.reports or self.trends or self.errors
                    or self.path_rows or self.ladder_rows)

    @property
    def verdict(self) -> str:
        if self.errors:
            return VERDICT_ERROR
        if self.is_empty:
            return VERDICT_NOOP
        checks = ([r.report.passed for r in self.reports if not r.report.informational]
                  + [t.passed for t in self.trends] + [t.passed for t in self.condition_trends])
        return VERDICT_PASS if all(checks) else VERDICT_FAIL

    @property
    def exit_code(self) -> int:
        if self.errors:
            return max(e.exit_code for e in self.errors)
        return int(ExitCode.PASS if self.verdict in (VERDICT_PASS, VERDICT_NOOP) else ExitCode.VERDICT_FAIL)


def error_exit_code(error: Exception) -> int:
    if isinstance(error, NumericFailureError):
        return int(ExitCode.NUMERIC_FAILURE)
    if isinstance(error, UsageError):
        return int(ExitCode.USAGE)
    return int(ExitCode.VERDICT_FAIL)


def config_fingerprint(config: ExperimentConfig, stages: Sequence[Stage], version: str = "") -> str:
    payload = {"config": config.fingerprint_fields(), "stages": [s.value for s in stages],
               "version": version, "format": CHECKPOINT_FORMAT}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


# ==============================================================================
# 1) ANALYTIC STAGE
# ==============================================================================

def analytic_rows(preset: Preset, n_grid: Sequence[int], limit: LimitSpec, tolerances: Tolerances) -> List[dict]:
    """psi(1), eta, phi(1) and ladder rates of every rescaled member, then the limit row (n = 0)."""
    rows = []
    for n in n_grid:
        spec, mark, scaling = preset.member(n)
        measure = ladder_measure(spec, mark, scaling, tolerances)
        rescaled = measure.spec
        rows.append({
            "n": n,
            "d_n": scaling.d_n,
            "criticality": criticality(rescaled).value,
            "psi_1": laplace_exponent(rescaled, 1.0, tolerances),
            "eta": measure.eta,
            "phi_1": phi_inverse(rescaled, 1.0, tolerances),
            "mu_plus": measure.mu_plus_mass,
            "lambda": measure.lambda_rate,
            "kill": measure.kill_rate,
            "mark_rate": limit.mark_rate,
        })
    rows.append({
        "n": 0,
        "d_n": float("nan"),
        "criticality": "limit",
        "psi_1": limit.laplace_exponent(1.0, tolerances),
        "eta": limit.eta,
        "phi_1": limit.phi(1.0, tolerances),
        "mu_plus": 0.0 if limit.limit_measure.is_zero else float("nan"),
        "lambda": limit.mark_rate,
        "kill": limit.kill,
        "mark_rate": limit.mark_rate,
    })
    return rows


# ==============================================================================
# 2) CHECKPOINTS
# ==============================================================================

def _checkpoint_path(out_dir: str, n: int) -> str:
    return os.path.join(out_dir, CHECKPOINT_DIR, f"n{n:05d}.json")


def save_checkpoint(out_dir: str, fingerprint: str, outcome: IndexOutcome, walk: Optional[dict],
                    walk_report: Optional[DistanceReport]):
    path = _checkpoint_path(out_dir, outcome.row.n)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    payload = {
        "fingerprint": fingerprint,
        "row": outcome.row._asdict(),
        "fixed": [r.as_dict() for r in outcome.fixed],
        "tracked": [r.as_dict() for r in outcome.tracked],
        "walk": walk,
        "walk_report": walk_report.as_dict() if walk_report is not None else None,
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, sort_keys=True)
    os.replace(tmp, path)


def load_checkpoint(out_dir: str, fingerprint: str, n: int):
    """(outcome, walk row, walk report) from a matching checkpoint, or None."""
    path = _checkpoint_path(out_dir, n)
    try:
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError):
        return None
    if payload.get("fingerprint") != fingerprint:
        return None
    outcome = IndexOutcome(
        row=IndexRow(**payload["row"]),
        fixed=tuple(DistanceReport.from_dict(d) for d in payload["fixed"]),
        tracked=tuple(DistanceReport.from_dict(d) for d in payload["tracked"]),
    )
    walk_report = DistanceReport.from_dict(payload["walk_report"]) if payload.get("walk_report") else None
    return outcome, payload.get("walk"), walk_report


# ==============================================================================
# 3) PER-INDEX MONTE CARLO
# ==============================================================================

def _simulate(context: IndexContext, paths: int, executor: ThreadPoolExecutor):
    key = f"n{context.n:03d}"
    progress_logger.start(key, paths)
    parts = []
    try:
        for part in executor.map(lambda item: simulate_index(context, *item), replicate_chunks(paths)):
            parts.append(part)
            if progress_logger.advance(key, part.replicates):
                logger.info(f"run.n: n={context.n} replicates {progress_logger.format_progress(key)}")
    finally:
        progress_logger.reset(key)
    return merge_index_samples(parts)


def _walk_row(context: IndexContext, steps: int, fristedt) -> dict:
    return {
        "n": context.n,
        "k": steps,
        "alpha_hat": fristedt.alpha,
        "se": fristedt.standard_error,
        "k_max": fristedt.k_max,
        "tail": fristedt.tail_bound,
        "replicates": fristedt.replicates,
        "alpha_exact": context.scaling.alpha,
    }


def _dump_replicates(context: IndexContext, count: int, stages: Sequence[Stage], bundle: ReportBundle):
    for i in range(count):
        path = replicate_path(context, i)
        if Stage.SIMULATE in stages:
            bundle.path_rows.extend((context.n, i, t, s, m) for t, s, m in path_rows(path))
        if Stage.LADDER in stages:
            ladder = build_ladder(path, context.scaling.alpha)
            bundle.ladder_rows.extend((context.n, i, p.record_time, p.local_time, p.overshoot, p.undershoot, p.mark)
                                      for p in ladder.points)


# ==============================================================================
# 4) RUN
# ==============================================================================

def run_experiment(config: ExperimentConfig, stages: Sequence[Stage], version: str = "",
                   resume: bool = True) -> ReportBundle:
    """
    Run the requested stages and collect the bundle.

    Errors of a stage or index are recorded in the bundle (verdict "error")
    and the run continues with the remaining work.
    """
    started = time.monotonic()
    stages = tuple(stages)
    preset = config.resolved_preset()
    tolerances = config.tolerance_set()
    n_grid = list(config.n_grid)
    out_dir = config.output_dir
    fingerprint = config_fingerprint(config, stages, version)
    bundle = ReportBundle(preset_id=preset.preset_id, seed_base=config.seed_base,
                          stages=tuple(s.value for s in stages), config=config.model_dump(mode="json"))
    logger.info(f"run.begin: preset={preset.preset_id} stages={','.join(bundle.stages)} n_grid={n_grid} "
                f"paths={config.paths_per_n} seed_base={config.seed_base} fingerprint={fingerprint[:12]}")

    def record_error(stage: str, n: Optional[int], error: Exception):
        bundle.errors.append(StageError(stage, n, type(error).__name__, str(error), error_exit_code(error)))
        logger.error(f"run.error: stage={stage} n={n} {type(error).__name__}: {error}")

    limit = None
    try:
        limit = limit_parameters(preset, tolerances)
    except FluctLabError as e:
        record_error("limit", None, e)

    if limit is not None and Stage.CALC in stages:
        try:
            bundle.analytic = analytic_rows(preset, n_grid, limit, tolerances)
            conditions = js_condition_check(family_members(preset.family, n_grid), limit, tolerances)
            bundle.conditions = list(conditions.rows)
            bundle.condition_trends = list(conditions.trends)
        except FluctLabError as e:
            record_error(Stage.CALC.value, None, e)

    monte_carlo = Stage.VERIFY in stages or Stage.CONVERGE in stages
    dumps = Stage.SIMULATE in stages or Stage.LADDER in stages
    mc_stage = Stage.VERIFY.value if Stage.VERIFY in stages else Stage.CONVERGE.value
    outcomes: List[IndexOutcome] = []

    if limit is not None and (monte_carlo or dumps):
        workers = resolve_threads(config.threads, len(replicate_chunks(config.paths_per_n)))
        logger.info(f"run.begin: workers={workers}")
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="worker") as executor:
            for n in n_grid:
                try:
                    context = index_context(preset, n, config.horizon, config.local_time_target,
                                            config.seed_base, tolerances)
                except FluctLabError as e:
                    record_error("index", n, e)
                    continue

                if dumps:
                    try:
                        _dump_replicates(context, min(config.dump_paths, config.paths_per_n), stages, bundle)
                    except FluctLabError as e:
                        record_error(Stage.SIMULATE.value if Stage.SIMULATE in stages else Stage.LADDER.value, n, e)

                if not monte_carlo:
                    continue
                cached = load_checkpoint(out_dir, fingerprint, n) if resume else None
                if cached is not None:
                    outcome, walk, walk_report = cached
                    logger.info(f"run.resume: n={n} restored from checkpoint")
                else:
                    try:
                        samples = _simulate(context, config.paths_per_n, executor)
                        outcome = evaluate_index(context, samples, limit, tolerances)
                    except FluctLabError as e:
                        record_error(mc_stage, n, e)
                        continue
                    walk, walk_report = None, None
                    if Stage.VERIFY in stages:
                        steps = config.walk_steps_factor * n
                        try:
                            walk_report, fristedt = walk_identity_check(context, config.walk_replicates, steps,
                                                                        tolerances)
                            walk = _walk_row(context, steps, fristedt)
                        except FluctLabError as e:
                            record_error(Stage.VERIFY.value, n, e)
                    save_checkpoint(out_dir, fingerprint, outcome, walk, walk_report)

                outcomes.append(outcome)
                bundle.index_rows.append(outcome.row)
                if Stage.VERIFY in stages:
                    bundle.reports.extend(StageReport(Stage.VERIFY.value, r) for r in outcome.fixed)
                    if walk_report is not None:
                        bundle.reports.append(StageReport(Stage.VERIFY.value, walk_report))
                    if walk is not None:
                        bundle.walk_rows.append(walk)
                if Stage.CONVERGE in stages:
                    bundle.reports.extend(StageReport(Stage.CONVERGE.value, r) for r in outcome.tracked)
                logger.info(f"run.n: n={n} done, {outcome.row.replicates} replicates, "
                            f"{outcome.row.records} records, censored={outcome.row.horizon_censored:.2%}")

    if limit is not None and Stage.VERIFY in stages:
        try:
            report = limit_sampler_check(limit, config.limit_draws, experiment_seed(config.seed_base, 0, 0),
                                         config.local_time_target, tolerances)
            bundle.reports.append(StageReport(Stage.VERIFY.value, report))
        except FluctLabError as e:
            record_error(Stage.VERIFY.value, 0, e)

    if Stage.CONVERGE in stages and len(outcomes) > 1:
        bundle.trends = trend_verdicts([r for o in sorted(outcomes, key=lambda o: o.row.n) for r in o.tracked],
                                       tolerances)

    bundle.runtime = runtime_metadata(started, version, config)
    logger.info(f"run.verdict: {bundle.verdict} ({len(bundle.reports)} reports, {len(bundle.trends)} trends, "
                f"{len(bundle.errors)} errors) in {bundle.runtime['elapsed_s']:.1f}s")
    return bundle


def runtime_metadata(started: float, version: str, config: ExperimentConfig) -> Dict[str, object]:
    process = psutil.Process()
    return {
        "elapsed_s": time.monotonic() - started,
        "rss_bytes": int(process.memory_info().rss),
        "cpu_count": psutil.cpu_count(logical=True),
        "threads": resolve_threads(config.threads, len(replicate_chunks(config.paths_per_n))),
        "version": version,
        "generator": GENERATOR_NAME,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
