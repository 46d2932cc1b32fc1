"""
Constants, enumerations and default tolerances for the fluctuation lab.

Contains metric and assumption enums, pipeline stages, exit codes, the
default tolerance table and helpers to log distance reports in a
consistent format.
"""

from dataclasses import dataclass, fields, replace
from enum import Enum, IntEnum
from typing import Dict, Mapping, Tuple

from .exceptions import UsageError


# ==============================================================================
# 1) COMPARATORS - what a distance report can measure
# ==============================================================================

class Metric(Enum):
    KS = "KS"
    WASSERSTEIN_1 = "Wasserstein-1"
    TV_INTEGERS = "TV-on-integers"
    LAPLACE_GAP = "Laplace-grid-max-gap"
    # Extensions: value/threshold are chosen so that pass <=> value <= threshold
    CHI_SQUARE = "chi-square"              # statistic vs 99% quantile
    MEAN_Z = "mean-z"                      # |z| vs z_critical
    EXPONENTIAL_RATE = "exponential-rate"  # max(|z|/z_crit, KS/KS_crit) vs 1


class Assumption(Enum):
    B1 = "B1"   # constant mark probabilities theta_n
    B2 = "B2"   # size-dependent f_n with slope kappa at 0


class Criticality(Enum):
    SUBCRITICAL = "subcritical"      # psi'(0+) > 0, drifts to -inf
    CRITICAL = "critical"            # psi'(0+) = 0, oscillates
    SUPERCRITICAL = "supercritical"  # psi'(0+) < 0, drifts to +inf


# ==============================================================================
# 2) PIPELINE - stages and the subcommands that select them
# ==============================================================================

class Stage(Enum):
    CALC = "calc"
    SIMULATE = "simulate"
    LADDER = "ladder"
    VERIFY = "verify"
    CONVERGE = "converge"


SUBCOMMAND_STAGES: Dict[str, Tuple[Stage, ...]] = {
    "calc": (Stage.CALC,),
    "simulate": (Stage.CALC, Stage.SIMULATE),
    "ladder": (Stage.CALC, Stage.LADDER),
    "verify": (Stage.CALC, Stage.VERIFY),
    "converge": (Stage.CALC, Stage.CONVERGE),
    "all": (Stage.CALC, Stage.SIMULATE, Stage.LADDER, Stage.VERIFY, Stage.CONVERGE),
}


class ExitCode(IntEnum):
    PASS = 0
    VERDICT_FAIL = 1
    USAGE = 2
    NUMERIC_FAILURE = 3


# Verdict labels used in summaries
VERDICT_PASS = "pass"
VERDICT_FAIL = "fail"
VERDICT_ERROR = "error"
VERDICT_NOOP = "no-op"

# Generator identity recorded in every report
GENERATOR_NAME = "numpy.random.Philox(4x64-10)"
# Reals in CSV output: 17 significant digits round-trip a float64
CSV_FLOAT_FORMAT = ".17g"
# Environment variable capping worker threads
THREADS_ENV_VAR = "FLUCTLAB_THREADS"


# ==============================================================================
# 3) TOLERANCES - overridable through the experiment configuration
# ==============================================================================

@dataclass(frozen=True)
class Tolerances:
    quad_rel: float = 1e-10              # relative error of psi quadrature
    ladder_rel: float = 1e-8             # relative error of ladder-measure masses
    eta_abs: float = 1e-12               # bisection tolerance for eta
    phi_rel: float = 1e-10               # |psi(phi(a)) - a| <= phi_rel * max(1, a)
    scale_step: float = 1e-3             # Volterra marching step h
    scale_tol: float = 1e-6              # Richardson error bound (h vs h/2)
    ks_coefficient: float = 1.63         # KS threshold = coefficient / sqrt(N), 1% level
    tv_threshold: float = 0.05           # TV-on-integers pass threshold
    w1_floor: float = 1e-12              # distances at or below this count as zero
    z_critical: float = 3.0              # standard errors allowed for mean / rate tests
    max_censored_fraction: float = 0.05  # censoring above this aborts an estimate
    kill_depth_tol: float = 1e-6         # record probability below which a path is killed
    bootstrap_resamples: int = 200       # resamples for bootstrap standard errors
    fristedt_tail: float = 1e-6          # truncation bound of the Fristedt series
    min_uncensored: int = 1000           # minimum uncensored values for rate tests

    def with_overrides(self, overrides: Mapping[str, float]) -> "Tolerances":
        """
        Return a copy with overridden fields.

        Raises:
            UsageError: If a key is not a tolerance name
        """
        known = {f.name: f.type for f in fields(self)}
        unknown = sorted(set(overrides) - set(known))
        if unknown:
            raise UsageError(f"unknown tolerance keys: {', '.join(unknown)} (known: {', '.join(sorted(known))})")
        cast = {k: (int(v) if known[k] in (int, "int") else float(v)) for k, v in overrides.items()}
        return replace(self, **cast)

    def as_dict(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


DEFAULT_TOLERANCES = Tolerances()


def log_report(logger, report, trace_id: str = ""):
    """
    Log a distance report in a consistent format with optional trace ID.

    Args:
        logger: Logger instance to use
        report: DistanceReport (duck-typed: metric, label, n_index, value, threshold, passed)
        trace_id: Optional trace ID for correlation (e.g., "n016-r00042")
    """
    prefix = f"[{trace_id}] " if trace_id else ""
    status = "INFO" if getattr(report, "informational", False) else ("PASS" if report.passed else "FAIL")
    logger.info(
        f"{prefix}lab.distance: {report.label} n={report.n_index} {report.metric.value}="
        f"{report.value:.6g} (threshold {report.threshold:.6g}) {status}"
    )
