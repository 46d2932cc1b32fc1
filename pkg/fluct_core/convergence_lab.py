"""
Statistical comparators and the per-n experiment logic.

Comparators turn samples into DistanceReport rows whose verdict is always
value <= threshold. The experiment side simulates every replicate of an
index n, decomposes it into its ladder, and runs two kinds of checks:

    fixed-n   prelimit identities that hold exactly at every n
              (mark time rate, ladder jump law, kill rate, kappa * phi = 1)
    tracked   distance of a ladder marginal at local time t to the limit
              law, with a trend verdict over the n grid
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, stats

from .constants import Criticality, DEFAULT_TOLERANCES, Metric, Tolerances, log_report
from .exceptions import FluctLabError, HorizonTooShortError, PrecisionFailureError, SpecValidationError, UsageError
from .ladder_decomposition import build_ladder, first_mark_time, marginals_at, records_needed
from .levy_calculus import (LadderMeasure, LimitSpec, criticality, eta_root, kill_depth, ladder_measure,
                            limit_parameters, phi_inverse, scale_function)
from .path_simulator import STOP_HORIZON, STOP_KILLED, STOP_RECORDS, MarkedPath, rescale_path, sample_marked_path_until
from .presets import LevyFamily, Preset
from .random_walk_bridge import (FristedtEstimate, WalkLaw, discretize_path, fristedt_alpha, fristedt_k_max,
                                 jump_chain_walk, walk_ladder_exponent)
from .seeds import BOOTSTRAP_STREAM, experiment_seed, make_generator, substream, trace_id
from .specs import MarkRule, ProcessSpec, ScalingParams
from .subordinator_sampler import limit_subordinator, sample_marginals, subordinator_exponent

logger = logging.getLogger(__name__)

# Laplace grid of the Laplace-gap metric
LAPLACE_GRID = (0.5, 1.0, 2.0)
# Quartile cells of the (undershoot, overshoot) chi-square
CHI_SQUARE_QUANTILES = (0.25, 0.5, 0.75)
CHI_SQUARE_MIN_EXPECTED = 5.0
CHI_SQUARE_LEVEL = 0.99
# Pooled records needed before the record-law checks run
MIN_POOLED_RECORDS = 100
# kappa * phi identity: smallest allowed gap
KAPPA_PHI_FLOOR = 0.02
# Local time exposure (in units of 1 / kill) observed for the kill test
KILL_EXPOSURE = 4.0
# Scale gap: evaluation range, marching step per unit of n, error bound
SCALE_GAP_RANGE = (0.25, 2.0)
SCALE_GAP_POINTS = 36
SCALE_GAP_STEP = 0.05
SCALE_GAP_TOL = 1e-4
# Replicates per simulation work item
DEFAULT_CHUNK = 250


# ==============================================================================
# 1) SAMPLES AND REPORTS
# ==============================================================================

@dataclass(frozen=True, eq=False)
class SampleSet:
    """
    Univariate (N,) or bivariate (N, 2) sample with optional censoring flags.
    seed_range is the half-open replicate range the values came from.
    """
    label: str
    values: np.ndarray
    n_index: int = 1
    seed_range: Tuple[int, int] = (0, 0)
    censored: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size == 0:
            raise SpecValidationError(f"sample set {self.label!r} is empty", "values")
        if values.ndim not in (1, 2) or (values.ndim == 2 and values.shape[1] != 2):
            raise SpecValidationError(f"sample set {self.label!r} must be (N,) or (N, 2)", "values")
        if not np.all(np.isfinite(values)):
            raise SpecValidationError(f"sample set {self.label!r} has non-finite values", "values")
        object.__setattr__(self, "values", values)
        if self.censored is not None:
            censored = np.asarray(self.censored, dtype=bool)
            if censored.shape != (values.shape[0],):
                raise SpecValidationError("censoring flags do not match the sample", "censored")
            object.__setattr__(self, "censored", censored)

    @property
    def size(self) -> int:
        return int(self.values.shape[0])

    @property
    def bivariate(self) -> bool:
        return self.values.ndim == 2


def merge_sample_sets(parts: Iterable[SampleSet]) -> SampleSet:
    """Concatenate partial sample sets in replicate order, whatever order they arrive in."""
    parts = sorted(parts, key=lambda p: p.seed_range)
    if not parts:
        raise SpecValidationError("nothing to merge", "parts")
    if len({p.n_index for p in parts}) > 1:
        raise UsageError("cannot merge sample sets of different n")
    censored = None
    if any(p.censored is not None for p in parts):
        censored = np.concatenate([p.censored if p.censored is not None else np.zeros(p.size, dtype=bool)
                                   for p in parts])
    return SampleSet(
        label=parts[0].label,
        values=np.concatenate([p.values for p in parts]),
        n_index=parts[0].n_index,
        seed_range=(parts[0].seed_range[0], parts[-1].seed_range[1]),
        censored=censored,
    )


@dataclass(frozen=True)
class DistanceReport:
    metric: Metric
    label: str
    n_index: int
    value: float
    threshold: float
    sample_sizes: Tuple[int, ...] = ()
    detail: Tuple[Tuple[str, float], ...] = ()

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.threshold)

    @property
    def informational(self) -> bool:
        """No finite threshold: the row is context for a trend, not a check."""
        return not math.isfinite(self.threshold)

    def as_dict(self) -> dict:
        return {
            "metric": self.metric.value,
            "label": self.label,
            "n": self.n_index,
            "value": float(self.value),
            "threshold": float(self.threshold),
            "pass": self.passed,
            "informational": self.informational,
            "sample_sizes": list(self.sample_sizes),
            "detail": {k: float(v) for k, v in self.detail},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DistanceReport":
        """Inverse of as_dict (used when resuming from checkpoints)."""
        return cls(metric=Metric(data["metric"]), label=data["label"], n_index=int(data["n"]),
                   value=float(data["value"]), threshold=float(data["threshold"]),
                   sample_sizes=tuple(int(s) for s in data.get("sample_sizes", ())),
                   detail=tuple((k, float(v)) for k, v in data.get("detail", {}).items()))


# ==============================================================================
# 2) ANALYTIC LAWS
# ==============================================================================

@dataclass(frozen=True)
class ExponentialLaw:
    rate: float
    continuous = True

    def cdf(self, x):
        return stats.expon.cdf(x, scale=1.0 / self.rate)

    def laplace(self, beta: float) -> float:
        return self.rate / (self.rate + beta)


@dataclass(frozen=True)
class PoissonLaw:
    rate: float
    continuous = False

    def pmf(self, k):
        return stats.poisson.pmf(k, self.rate)

    def sf(self, k):
        return stats.poisson.sf(k, self.rate)

    def laplace(self, beta: float) -> float:
        return math.exp(self.rate * math.expm1(-beta))


@dataclass(frozen=True)
class PointMass:
    value: float
    continuous = False

    def cdf(self, x):
        return (np.asarray(x, dtype=float) >= self.value).astype(float)

    def laplace(self, beta: float) -> float:
        return math.exp(-beta * self.value)


@dataclass(frozen=True)
class LadderLaw:
    """Normalized overshoot or undershoot law of a ladder measure (no atoms)."""
    measure: LadderMeasure
    coordinate: str = "overshoot"
    continuous = True

    def __post_init__(self):
        if self.coordinate not in ("overshoot", "undershoot"):
            raise UsageError(f"unknown ladder coordinate {self.coordinate!r}")

    def cdf(self, x):
        if self.coordinate == "overshoot":
            return self.measure.overshoot_cdf(x)
        return self.measure.undershoot_cdf(x)

    def quantile(self, p: float) -> float:
        hi = 1.0
        while float(self.cdf(hi)) < p:
            hi *= 2.0
        return float(optimize.brentq(lambda v: float(self.cdf(v)) - p, 0.0, hi, xtol=1e-12))

    def laplace(self, beta: float) -> float:
        if self.coordinate != "overshoot":
            raise UsageError("Laplace transform is available for the overshoot law only")
        return 1.0 - self.measure.laplace_integral(beta, 0.0) / self.measure.mu_plus_mass


AnalyticLaw = Union[ExponentialLaw, PoissonLaw, PointMass, LadderLaw]


# ==============================================================================
# 3) COMPARATORS
# ==============================================================================

def _univariate(samples: SampleSet, metric: Metric) -> np.ndarray:
    if samples.bivariate:
        raise UsageError(f"{metric.value} needs univariate samples, {samples.label!r} is bivariate")
    return samples.values


def _integer_counts(values: np.ndarray, label: str) -> np.ndarray:
    if np.any(values < 0) or np.any(values != np.round(values)):
        raise UsageError(f"TV-on-integers needs nonnegative integer samples ({label!r})")
    return np.bincount(values.astype(np.int64)) / values.size


def empirical_laplace(samples: SampleSet, beta: float, gamma: float = 0.0,
                      tolerances: Tolerances = DEFAULT_TOLERANCES,
                      alive: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """
    Mean of exp(-beta x - gamma y) with a bootstrap standard error.

    Args:
        samples: Univariate (y = 0) or bivariate (x, y) samples
        alive: Optional mask; entries outside it contribute 0

    Returns:
        (estimate, standard error); the bootstrap stream is keyed by the
        first replicate of the sample
    """
    if beta < 0 or gamma < 0:
        raise SpecValidationError("beta and gamma must be nonnegative")
    values = samples.values
    x, y = (values[:, 0], values[:, 1]) if samples.bivariate else (values, 0.0)
    weights = np.exp(-beta * x - gamma * y)
    if alive is not None:
        weights = np.where(np.asarray(alive, dtype=bool), weights, 0.0)
    estimate = float(np.mean(weights))
    if np.all(weights == weights[0]):
        return estimate, 0.0
    rng = make_generator(substream(samples.seed_range[0], BOOTSTRAP_STREAM))
    size = weights.size
    means = np.array([weights[rng.integers(0, size, size)].mean() for _ in range(tolerances.bootstrap_resamples)])
    return estimate, float(np.std(means, ddof=1))


def distribution_distance(a: SampleSet, b: Union[SampleSet, AnalyticLaw], metric: Union[Metric, str],
                          tolerances: Tolerances = DEFAULT_TOLERANCES,
                          threshold: Optional[float] = None) -> DistanceReport:
    """
    Distance between a sample and another sample or an analytic law.

    KS takes continuous laws (exponential, ladder) or samples; TV-on-integers
    takes a Poisson law or integer samples; Wasserstein-1 takes samples or a
    point mass; the Laplace-grid gap takes any law with a transform.

    Raises:
        UsageError: On a metric/law mismatch
    """
    metric = Metric(metric)
    sizes: Tuple[int, ...] = (a.size,) if not isinstance(b, SampleSet) else (a.size, b.size)

    if metric is Metric.KS:
        x = _univariate(a, metric)
        if isinstance(b, SampleSet):
            y = _univariate(b, metric)
            value = float(stats.ks_2samp(x, y).statistic)
            default = tolerances.ks_coefficient * math.sqrt((x.size + y.size) / (x.size * y.size))
        elif isinstance(b, (ExponentialLaw, LadderLaw)):
            value = float(stats.kstest(x, b.cdf).statistic)
            default = tolerances.ks_coefficient / math.sqrt(x.size)
        else:
            raise UsageError(f"KS needs a continuous law, got {type(b).__name__}")

    elif metric is Metric.TV_INTEGERS:
        p = _integer_counts(_univariate(a, metric), a.label)
        if isinstance(b, SampleSet):
            q = _integer_counts(_univariate(b, metric), b.label)
            width = max(p.size, q.size)
            p, q = np.pad(p, (0, width - p.size)), np.pad(q, (0, width - q.size))
            value = 0.5 * float(np.sum(np.abs(p - q)))
        elif isinstance(b, PoissonLaw):
            q = b.pmf(np.arange(p.size))
            value = 0.5 * (float(np.sum(np.abs(p - q))) + float(b.sf(p.size - 1)))
        else:
            raise UsageError(f"TV-on-integers needs a Poisson law or samples, got {type(b).__name__}")
        default = tolerances.tv_threshold

    elif metric is Metric.WASSERSTEIN_1:
        x = _univariate(a, metric)
        if isinstance(b, SampleSet):
            value = float(stats.wasserstein_distance(x, _univariate(b, metric)))
        elif isinstance(b, PointMass):
            value = float(np.mean(np.abs(x - b.value)))
        else:
            raise UsageError(f"Wasserstein-1 needs samples or a point mass, got {type(b).__name__}")
        default = np.inf

    elif metric is Metric.LAPLACE_GAP:
        gaps, errors = [], []
        for beta in LAPLACE_GRID:
            estimate, se = empirical_laplace(a, beta, 0.0, tolerances)
            if isinstance(b, SampleSet):
                target, se_b = empirical_laplace(b, beta, 0.0, tolerances)
                se = math.hypot(se, se_b)
            elif hasattr(b, "laplace"):
                target = b.laplace(beta)
            else:
                raise UsageError(f"no Laplace transform for {type(b).__name__}")
            gaps.append(abs(estimate - target))
            errors.append(se)
        value = max(gaps)
        default = max(tolerances.z_critical * max(errors), tolerances.w1_floor)

    else:
        raise UsageError(f"distribution_distance does not compute {metric.value}")

    report = DistanceReport(metric=metric, label=a.label, n_index=a.n_index, value=value,
                            threshold=default if threshold is None else threshold, sample_sizes=sizes)
    logger.debug(f"lab.distance: {a.label} {metric.value}={value:.6g} threshold={report.threshold:.6g}")
    return report


def exponential_rate_test(samples: SampleSet, rate: float, cap: Optional[float] = None,
                          tolerances: Tolerances = DEFAULT_TOLERANCES) -> DistanceReport:
    """
    Censored maximum-likelihood rate against the analytic rate, plus KS of
    the uncensored values against Exp(rate) truncated at the cap.

    The MLE is (uncensored count) / (sum of all exposures); its z-score uses
    s.e. rate / sqrt(count). The report value is max(|z| / z_critical,
    KS / KS_threshold) so the test passes iff both parts pass.

    Raises:
        PrecisionFailureError: If fewer than min_uncensored values are uncensored
    """
    if not rate > 0:
        raise SpecValidationError(f"rate must be positive, got {rate}", "rate")
    values = _univariate(samples, Metric.EXPONENTIAL_RATE)
    censored = samples.censored if samples.censored is not None else np.zeros(values.size, dtype=bool)
    uncensored = values[~censored]
    count = uncensored.size
    if count < tolerances.min_uncensored:
        raise PrecisionFailureError(
            f"{samples.label}: {count} uncensored values, need {tolerances.min_uncensored}",
            achieved_se=rate / math.sqrt(count) if count else np.inf, required=rate / math.sqrt(tolerances.min_uncensored),
        )
    mle = count / float(np.sum(values))
    z = (mle - rate) / (rate / math.sqrt(count))

    if cap is None and np.any(censored):
        cap = float(np.min(values[censored]))
    if cap is not None:
        uncensored = uncensored[uncensored <= cap]
        scale = -math.expm1(-rate * cap)
        law_cdf = lambda x: -np.expm1(-rate * np.minimum(x, cap)) / scale
    else:
        law_cdf = lambda x: -np.expm1(-rate * np.asarray(x))
    ks = float(stats.kstest(uncensored, law_cdf).statistic)
    ks_threshold = tolerances.ks_coefficient / math.sqrt(uncensored.size)

    report = DistanceReport(
        metric=Metric.EXPONENTIAL_RATE, label=samples.label, n_index=samples.n_index,
        value=max(abs(z) / tolerances.z_critical, ks / ks_threshold), threshold=1.0,
        sample_sizes=(samples.size, count),
        detail=(("mle", mle), ("rate", rate), ("z", z), ("ks", ks), ("ks_threshold", ks_threshold),
                ("cap", np.nan if cap is None else cap)),
    )
    logger.debug(f"lab.rate: {samples.label} mle={mle:.6g} rate={rate:.6g} z={z:.3f} ks={ks:.4f}")
    return report


def mean_test(samples: SampleSet, mean: float, tolerances: Tolerances = DEFAULT_TOLERANCES) -> DistanceReport:
    """|z| of the sample mean against an analytic mean."""
    values = _univariate(samples, Metric.MEAN_Z)
    average = float(np.mean(values))
    se = float(np.std(values, ddof=1)) / math.sqrt(values.size) if values.size > 1 else np.inf
    if se == 0:
        z = 0.0 if average == mean else np.inf
    else:
        z = (average - mean) / se
    return DistanceReport(metric=Metric.MEAN_Z, label=samples.label, n_index=samples.n_index, value=abs(z),
                          threshold=tolerances.z_critical, sample_sizes=(values.size,),
                          detail=(("mean", average), ("expected", mean), ("se", se)))


def ladder_chi_square(undershoots: np.ndarray, overshoots: np.ndarray, measure: LadderMeasure, n_index: int = 1,
                      label: str = "undershoot x overshoot") -> DistanceReport:
    """
    Chi-square of binned (undershoot, overshoot) pairs against the
    normalized intensity e^{-eta x} dx Lambda(x + dy).

    Cells come from the analytic quartiles of each coordinate; cells with
    expected count below 5 are pooled.

    Raises:
        PrecisionFailureError: If fewer than two cells remain after pooling
    """
    undershoots = np.asarray(undershoots, dtype=float)
    overshoots = np.asarray(overshoots, dtype=float)
    under_law, over_law = LadderLaw(measure, "undershoot"), LadderLaw(measure, "overshoot")
    x_inner = np.array([under_law.quantile(p) for p in CHI_SQUARE_QUANTILES])
    y_inner = np.array([over_law.quantile(p) for p in CHI_SQUARE_QUANTILES])
    x_edges = np.concatenate(([0.0], x_inner, [np.inf]))
    y_edges = np.concatenate(([0.0], y_inner, [np.inf]))

    cells = len(x_inner) + 1
    ix = np.searchsorted(x_inner, undershoots, side="right")
    iy = np.searchsorted(y_inner, overshoots, side="right")
    observed = np.bincount(ix * cells + iy, minlength=cells * cells).astype(float)
    masses = measure.bin_mass(x_edges, y_edges).ravel()
    expected = observed.sum() * masses / masses.sum()

    small = expected < CHI_SQUARE_MIN_EXPECTED
    if np.any(small):
        pooled_obs, pooled_exp = observed[small].sum(), expected[small].sum()
        observed, expected = observed[~small], expected[~small]
        if pooled_exp >= CHI_SQUARE_MIN_EXPECTED or observed.size == 0:
            observed, expected = np.append(observed, pooled_obs), np.append(expected, pooled_exp)
        else:
            largest = int(np.argmax(expected))
            observed[largest] += pooled_obs
            expected[largest] += pooled_exp
    if observed.size < 2:
        raise PrecisionFailureError(f"{label}: fewer than two chi-square cells", required=2.0)

    statistic = float(stats.chisquare(observed, expected).statistic)
    threshold = float(stats.chi2.ppf(CHI_SQUARE_LEVEL, observed.size - 1))
    return DistanceReport(metric=Metric.CHI_SQUARE, label=label, n_index=n_index, value=statistic,
                          threshold=threshold, sample_sizes=(int(observed.sum()),),
                          detail=(("cells", float(observed.size)),))


# ==============================================================================
# 4) JACOD-SHIRYAEV CONDITIONS
# ==============================================================================

class ConditionRow(NamedTuple):
    condition: str
    n: int
    value: float
    limit: float
    gap: float


class ConditionTrend(NamedTuple):
    condition: str
    first_n: int
    last_n: int
    first_gap: float
    last_gap: float
    passed: bool


@dataclass(frozen=True)
class ConditionReport:
    rows: Tuple[ConditionRow, ...]
    trends: Tuple[ConditionTrend, ...]

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.trends)


def family_members(family: LevyFamily, n_grid: Sequence[int]) -> List[Tuple[ScalingParams, ProcessSpec]]:
    return [(family.scaling(n), family.rescaled_spec(n)) for n in n_grid]


def _ladder_mass_ratio(spec: ProcessSpec, scaling: ScalingParams, tolerances: Tolerances) -> float:
    # (n / d_n) integral Lambda(du) integral_0^{1 ^ u} e^{eta (r - u)} dr
    eta = eta_root(spec, tolerances)
    measure = spec.levy_measure
    if eta == 0:
        return float(measure.integrated_tail(1.0)) / scaling.alpha

    def inner(u):
        return math.exp(-eta * u) * math.expm1(eta * min(1.0, u)) / eta

    return measure.integrate(inner, tolerances.quad_rel, points=(1.0,)) / scaling.alpha


def _scale_gap(spec: ProcessSpec, scaling: ScalingParams, limit: LimitSpec, tolerances: Tolerances) -> float:
    grid = np.linspace(*SCALE_GAP_RANGE, SCALE_GAP_POINTS)
    fine = tolerances.with_overrides({"scale_step": min(tolerances.scale_step, SCALE_GAP_STEP / scaling.n),
                                      "scale_tol": SCALE_GAP_TOL})
    return float(np.max(np.abs(scale_function(spec, grid, fine) - limit.scale_function(grid))))


def _trend(condition: str, rows: Sequence[ConditionRow], floor: float) -> ConditionTrend:
    first, last = rows[0], rows[-1]
    passed = last.gap < first.gap or last.gap <= floor
    return ConditionTrend(condition, first.n, last.n, first.gap, last.gap, passed)


def js_condition_check(members: Sequence[Tuple[ScalingParams, ProcessSpec]], limit: LimitSpec,
                       tolerances: Tolerances = DEFAULT_TOLERANCES) -> ConditionReport:
    """
    Convergence of the characteristics of the rescaled family, h(u) = 1 ^ u.

    Rows per n: drift-c (c_n = -d' - integral h), second-moment (integral h^2,
    limit b^2 + integral h^2 dLambda), tail-g1 / tail-g2 (test functions
    1_{u>1}(1 ^ (u-1)) and 1_{u>2}), ladder-mass-ratio (critical families),
    phi-gap and scale-gap.

    Raises:
        NumericFailureError: If a quadrature or the scale march fails
    """
    if not members:
        raise UsageError("js_condition_check needs at least one family member")
    lim = limit.limit_measure
    limit_values = {
        "drift-c": limit.drift,
        "second-moment": limit.b2 + 2.0 * float(lim.integrated_tail_sq(1.0)),
        "tail-g1": float(lim.integrated_tail(2.0) - lim.integrated_tail(1.0)),
        "tail-g2": float(lim.tail(2.0)),
        "ladder-mass-ratio": 1.0,
        "phi-gap": limit.phi(1.0, tolerances),
    }
    rows: Dict[str, List[ConditionRow]] = {}

    def add(condition, n, value, target):
        rows.setdefault(condition, []).append(ConditionRow(condition, n, float(value), float(target),
                                                           abs(float(value) - float(target))))

    for scaling, spec in members:
        n, measure = scaling.n, spec.levy_measure
        add("drift-c", n, -spec.drift - float(measure.integrated_tail(1.0)), limit_values["drift-c"])
        add("second-moment", n, 2.0 * float(measure.integrated_tail_sq(1.0)), limit_values["second-moment"])
        add("tail-g1", n, measure.integrated_tail(2.0) - measure.integrated_tail(1.0), limit_values["tail-g1"])
        add("tail-g2", n, measure.tail(2.0), limit_values["tail-g2"])
        if criticality(spec) is Criticality.CRITICAL:
            add("ladder-mass-ratio", n, _ladder_mass_ratio(spec, scaling, tolerances), 1.0)
        add("phi-gap", n, phi_inverse(spec, 1.0, tolerances), limit_values["phi-gap"])
        gap = _scale_gap(spec, scaling, limit, tolerances)
        rows.setdefault("scale-gap", []).append(ConditionRow("scale-gap", n, gap, 0.0, gap))

    flat = tuple(row for group in rows.values() for row in group)
    trends = tuple(_trend(name, group, tolerances.w1_floor) for name, group in rows.items())
    for trend in trends:
        logger.info(f"lab.conditions: {trend.condition} gap {trend.first_gap:.3e} (n={trend.first_n}) -> "
                    f"{trend.last_gap:.3e} (n={trend.last_n}) {'PASS' if trend.passed else 'FAIL'}")
    return ConditionReport(rows=flat, trends=trends)


# ==============================================================================
# 5) PER-INDEX EXPERIMENT
# ==============================================================================

@dataclass(frozen=True)
class IndexContext:
    """Everything a worker needs to simulate replicates of index n."""
    preset: Preset
    n: int
    scaling: ScalingParams
    spec: ProcessSpec
    mark: MarkRule
    measure: LadderMeasure
    kill_depth: float
    horizon: float
    local_time_target: float
    stop_local_time: float
    seed_base: int

    @property
    def horizon_unscaled(self) -> float:
        return self.horizon * self.scaling.d_n


def index_context(preset: Preset, n: int, horizon: float, local_time_target: float, seed_base: int,
                  tolerances: Tolerances = DEFAULT_TOLERANCES) -> IndexContext:
    """
    Analytic set-up of index n: rescaled ladder measure and kill depth.
    Killed families are observed up to KILL_EXPOSURE / kill in local time.
    """
    spec, mark, scaling = preset.member(n)
    measure = ladder_measure(spec, mark, scaling, tolerances)
    stop = local_time_target
    if measure.kill_rate > 0:
        stop = max(stop, KILL_EXPOSURE / measure.kill_rate)
    return IndexContext(preset=preset, n=n, scaling=scaling, spec=spec, mark=mark, measure=measure,
                        kill_depth=kill_depth(spec, tolerances), horizon=horizon,
                        local_time_target=local_time_target, stop_local_time=stop, seed_base=seed_base)


@dataclass(frozen=True, eq=False)
class IndexSamples:
    """
    Per-replicate results of index n, in replicate order.

    Marginals (H+, H-, H^M) at the local time target are NaN where the
    ladder is not determined. Mark times and L(inf) are censored at their
    caps; inverse_at_target is L^{-1}(target) in rescaled time (inf if killed).
    """
    n: int
    start: int
    indices: np.ndarray
    stop_reasons: np.ndarray
    h_plus: np.ndarray
    h_minus: np.ndarray
    h_mark: np.ndarray
    mark_time: np.ndarray
    mark_censored: np.ndarray
    total_local: np.ndarray
    total_censored: np.ndarray
    inverse_at_target: np.ndarray
    undershoots: np.ndarray
    overshoots: np.ndarray
    record_marks: np.ndarray
    events: int

    @property
    def replicates(self) -> int:
        return int(self.indices.size)

    @property
    def horizon_censored(self) -> np.ndarray:
        return self.stop_reasons == STOP_HORIZON

    @property
    def killed(self) -> np.ndarray:
        return self.stop_reasons == STOP_KILLED

    @property
    def seed_range(self) -> Tuple[int, int]:
        return self.start, self.start + self.replicates


def replicate_path(context: IndexContext, i: int) -> MarkedPath:
    """
    Rescaled path of replicate i, generated until its local time exceeds
    stop_local_time, it is killed, or the horizon is reached.
    """
    ctx = context
    seed = experiment_seed(ctx.seed_base, ctx.n, i)
    needed = records_needed(seed, ctx.scaling.alpha, ctx.stop_local_time)
    if needed == 0:
        path = MarkedPath(ctx.spec.drift, ctx.horizon_unscaled, [], [], [], seed, 0.0, STOP_RECORDS)
    else:
        path = sample_marked_path_until(ctx.spec, ctx.mark, ctx.horizon_unscaled, seed,
                                        record_target=needed, kill_depth=ctx.kill_depth)
    return rescale_path(path, ctx.scaling)


def simulate_index(context: IndexContext, start: int, count: int) -> IndexSamples:
    """
    Simulate replicates start..start+count-1 of index n.

    Each replicate runs only until its local time exceeds stop_local_time,
    it is killed, or the horizon is reached.
    """
    ctx, alpha = context, context.scaling.alpha
    target, cap_kill = ctx.local_time_target, ctx.stop_local_time
    rows = {key: [] for key in ("stop", "marginal", "mark_time", "mark_cens", "total", "total_cens", "inverse")}
    under, over, marks = [], [], []
    events = 0

    for i in range(start, start + count):
        path = replicate_path(ctx, i)
        ladder = build_ladder(path, alpha)
        events += path.event_count

        marginal = marginals_at(ladder, target)
        rows["marginal"].append(marginal if marginal is not None else (np.nan, np.nan, np.nan))
        first = first_mark_time(ladder)
        exposure = min(first.value, target, ladder.known_until)
        rows["mark_time"].append(exposure)
        rows["mark_cens"].append(first.censored or first.value > target)
        if ladder.killed:
            rows["total"].append(ladder.total_local_time)
            rows["total_cens"].append(False)
        else:
            rows["total"].append(min(ladder.total_local_time, cap_kill))
            rows["total_cens"].append(True)
        if ladder.killed and target >= ladder.total_local_time:
            rows["inverse"].append(np.inf)
        elif ladder.is_known(target):
            rows["inverse"].append(float(ladder.inverse_local_time(target)))
        else:
            rows["inverse"].append(np.nan)
        rows["stop"].append(path.stop_reason)
        under.append(ladder.undershoots)
        over.append(ladder.overshoots)
        marks.append(ladder.marks)
        logger.debug(f"[{trace_id(ctx.n, i)}] records={len(ladder.overshoots)} L={ladder.total_local_time:.6g} "
                     f"stop={path.stop_reason}")

    marginal = np.array(rows["marginal"], dtype=float).reshape(-1, 3)
    return IndexSamples(
        n=ctx.n, start=start, indices=np.arange(start, start + count),
        stop_reasons=np.array(rows["stop"], dtype=object),
        h_plus=marginal[:, 0], h_minus=marginal[:, 1], h_mark=marginal[:, 2],
        mark_time=np.array(rows["mark_time"], dtype=float), mark_censored=np.array(rows["mark_cens"], dtype=bool),
        total_local=np.array(rows["total"], dtype=float), total_censored=np.array(rows["total_cens"], dtype=bool),
        inverse_at_target=np.array(rows["inverse"], dtype=float),
        undershoots=np.concatenate(under) if under else np.empty(0),
        overshoots=np.concatenate(over) if over else np.empty(0),
        record_marks=np.concatenate(marks) if marks else np.empty(0, dtype=np.int8),
        events=events,
    )


def merge_index_samples(parts: Iterable[IndexSamples]) -> IndexSamples:
    """Replicate-ordered concatenation; independent of completion order."""
    parts = sorted(parts, key=lambda p: p.start)
    if not parts:
        raise SpecValidationError("nothing to merge", "parts")
    if len({p.n for p in parts}) > 1:
        raise UsageError("cannot merge samples of different n")

    def cat(name):
        return np.concatenate([getattr(p, name) for p in parts])

    return IndexSamples(
        n=parts[0].n, start=parts[0].start, indices=cat("indices"), stop_reasons=cat("stop_reasons"),
        h_plus=cat("h_plus"), h_minus=cat("h_minus"), h_mark=cat("h_mark"), mark_time=cat("mark_time"),
        mark_censored=cat("mark_censored"), total_local=cat("total_local"), total_censored=cat("total_censored"),
        inverse_at_target=cat("inverse_at_target"), undershoots=cat("undershoots"), overshoots=cat("overshoots"),
        record_marks=cat("record_marks"), events=sum(p.events for p in parts),
    )


def _kappa_phi_report(label: str, n: int, kappa: float, kappa_se: float, phi: float, size: int) -> DistanceReport:
    return DistanceReport(metric=Metric.LAPLACE_GAP, label=label, n_index=n, value=abs(kappa * phi - 1.0),
                          threshold=max(KAPPA_PHI_FLOOR, 3.0 * phi * kappa_se), sample_sizes=(size,),
                          detail=(("kappa", kappa), ("kappa_se", kappa_se), ("phi", phi)))


def fixed_index_checks(context: IndexContext, samples: IndexSamples,
                       tolerances: Tolerances = DEFAULT_TOLERANCES) -> List[DistanceReport]:
    """
    Identities that hold exactly at index n:

        e_n ~ Exp(lambda_n) censored at the local time target
        E H+(t) = t integral (z^2 / 2) Lambda_n(dz)   (eta = 0, no kill)
        pooled overshoots / undershoots follow the normalized ladder measure
        (undershoot, overshoot) pairs follow e^{-eta x} dx Lambda_n(x + dy)
        L(inf) ~ Exp(kill rate)                     (killed families)
        kappa_n(1, 0) phi_n(1) = 1

    Raises:
        HorizonTooShortError: If too many replicates hit the horizon
    """
    ctx, measure, n = context, context.measure, context.n
    usable = ~samples.horizon_censored
    fraction = 1.0 - float(np.mean(usable))
    if fraction > tolerances.max_censored_fraction:
        raise HorizonTooShortError(f"n={n}: {fraction:.1%} of replicates reached the horizon",
                                   censored_fraction=fraction, limit=tolerances.max_censored_fraction)
    seeds = samples.seed_range
    reports: List[DistanceReport] = []

    if ctx.preset.track_marks and measure.lambda_rate > 0:
        e_n = SampleSet("e_n", samples.mark_time[usable], n, seeds, censored=samples.mark_censored[usable])
        reports.append(exponential_rate_test(e_n, measure.lambda_rate, cap=ctx.local_time_target,
                                             tolerances=tolerances))

    known = ~np.isnan(samples.h_plus)
    if measure.eta == 0 and measure.kill_rate == 0 and not measure.spec.levy_measure.is_zero and known.any():
        expected = ctx.local_time_target * measure.spec.levy_measure.integrate(lambda z: 0.5 * z * z,
                                                                                tolerances.quad_rel)
        label = f"H_plus({ctx.local_time_target:g}) mean"
        reports.append(mean_test(SampleSet(label, samples.h_plus[known], n, seeds), expected, tolerances))

    if samples.overshoots.size >= MIN_POOLED_RECORDS:
        reports.append(distribution_distance(SampleSet("overshoot", samples.overshoots, n, seeds),
                                             LadderLaw(measure, "overshoot"), Metric.KS, tolerances))
        reports.append(distribution_distance(SampleSet("undershoot", samples.undershoots, n, seeds),
                                             LadderLaw(measure, "undershoot"), Metric.KS, tolerances))
        reports.append(ladder_chi_square(samples.undershoots, samples.overshoots, measure, n))
    else:
        logger.info(f"lab.index: n={n} only {samples.overshoots.size} pooled records, record-law checks skipped")

    if measure.kill_rate > 0:
        total = SampleSet("L(inf)", samples.total_local[usable], n, seeds, censored=samples.total_censored[usable])
        reports.append(exponential_rate_test(total, measure.kill_rate, cap=ctx.stop_local_time,
                                             tolerances=tolerances))

    determined = ~np.isnan(samples.inverse_at_target)
    weights = np.exp(-samples.inverse_at_target[determined])
    mean = float(np.mean(weights))
    if mean > 0:
        kappa = -math.log(mean)
        kappa_se = float(np.std(weights, ddof=1)) / (math.sqrt(weights.size) * mean) if weights.size > 1 else np.inf
        phi = phi_inverse(measure.spec, 1.0, tolerances)
        reports.append(_kappa_phi_report("kappa*phi ladder", n, kappa, kappa_se, phi, int(weights.size)))

    for report in reports:
        log_report(logger, report)
    return reports


def tracked_marginals(context: IndexContext, samples: IndexSamples, limit: LimitSpec,
                      tolerances: Tolerances = DEFAULT_TOLERANCES) -> List[DistanceReport]:
    """
    Distances of H^M(t) to Poisson(t * mark rate) and of H+(t) to the point
    mass t b^2 / 2. H+ is tracked only when the limit H+ is deterministic.
    """
    t, n, seeds = context.local_time_target, context.n, samples.seed_range
    known = ~np.isnan(samples.h_plus)
    reports = []
    if not known.any():
        return reports
    if context.preset.track_marks:
        reports.append(distribution_distance(SampleSet(f"H_mark({t:g})", samples.h_mark[known], n, seeds),
                                             PoissonLaw(t * limit.mark_rate), Metric.TV_INTEGERS, tolerances))
    if limit.kill == 0 or limit.b2 == 0:
        reports.append(distribution_distance(SampleSet(f"H_plus({t:g})", samples.h_plus[known], n, seeds),
                                             PointMass(t * limit.b2 / 2.0), Metric.WASSERSTEIN_1, tolerances))
    for report in reports:
        log_report(logger, report)
    return reports


class IndexRow(NamedTuple):
    """Summary row of one index for the bundle."""
    n: int
    d_n: float
    alpha: float
    replicates: int
    horizon_censored: float
    killed: float
    records: int
    events: int


@dataclass(frozen=True)
class IndexOutcome:
    row: IndexRow
    fixed: Tuple[DistanceReport, ...]
    tracked: Tuple[DistanceReport, ...]


def evaluate_index(context: IndexContext, samples: IndexSamples, limit: LimitSpec,
                   tolerances: Tolerances = DEFAULT_TOLERANCES) -> IndexOutcome:
    row = IndexRow(n=context.n, d_n=context.scaling.d_n, alpha=context.scaling.alpha,
                   replicates=samples.replicates, horizon_censored=float(np.mean(samples.horizon_censored)),
                   killed=float(np.mean(samples.killed)), records=int(samples.overshoots.size),
                   events=int(samples.events))
    return IndexOutcome(row=row, fixed=tuple(fixed_index_checks(context, samples, tolerances)),
                        tracked=tuple(tracked_marginals(context, samples, limit, tolerances)))


def replicate_chunks(count: int, chunk: int = DEFAULT_CHUNK) -> List[Tuple[int, int]]:
    """(start, count) work items covering replicates 0..count-1."""
    return [(start, min(chunk, count - start)) for start in range(0, count, chunk)]


# ==============================================================================
# 6) TRENDS AND THE CONVERGENCE REPORT
# ==============================================================================

class TrendVerdict(NamedTuple):
    label: str
    metric: str
    first_n: int
    last_n: int
    first_value: float
    last_value: float
    passed: bool


def trend_verdicts(tracked: Sequence[DistanceReport], tolerances: Tolerances = DEFAULT_TOLERANCES) -> List[TrendVerdict]:
    """
    Endpoint trend per tracked marginal: the distance at the largest n is
    below the one at the smallest n, or at the floor, or both endpoints are
    already within a finite fixed-n threshold (prelimit law equal to the
    limit law up to sampling noise).
    """
    groups: Dict[Tuple[str, Metric], List[DistanceReport]] = {}
    for report in tracked:
        groups.setdefault((report.label, report.metric), []).append(report)
    verdicts = []
    for (label, metric), reports in groups.items():
        reports = sorted(reports, key=lambda r: r.n_index)
        first, last = reports[0], reports[-1]
        settled = np.isfinite(last.threshold) and first.passed and last.passed
        passed = bool(last.value < first.value or last.value <= tolerances.w1_floor or settled)
        verdicts.append(TrendVerdict(label, metric.value, first.n_index, last.n_index, first.value,
                                     last.value, passed))
        logger.info(f"lab.trend: {label} {metric.value} {first.value:.4g} (n={first.n_index}) -> "
                    f"{last.value:.4g} (n={last.n_index}) {'PASS' if passed else 'FAIL'}")
    return verdicts


@dataclass(frozen=True)
class ConvergenceReport:
    preset_id: str
    n_grid: Tuple[int, ...]
    rows: Tuple[IndexRow, ...]
    reports: Tuple[DistanceReport, ...]
    trends: Tuple[TrendVerdict, ...]

    @property
    def passed(self) -> bool:
        checks = [r.passed for r in self.reports if not r.informational]
        return all(checks) and all(t.passed for t in self.trends)


def assemble_report(preset: Preset, outcomes: Sequence[IndexOutcome],
                    tolerances: Tolerances = DEFAULT_TOLERANCES) -> ConvergenceReport:
    """Ordered reports (by n, fixed checks first) and trends of the tracked marginals."""
    outcomes = sorted(outcomes, key=lambda o: o.row.n)
    tracked = [r for o in outcomes for r in o.tracked]
    return ConvergenceReport(
        preset_id=preset.preset_id,
        n_grid=tuple(o.row.n for o in outcomes),
        rows=tuple(o.row for o in outcomes),
        reports=tuple(r for o in outcomes for r in o.fixed + o.tracked),
        trends=tuple(trend_verdicts(tracked, tolerances)) if len(outcomes) > 1 else (),
    )


def convergence_report(preset: Preset, n_grid: Sequence[int], paths_per_n: int, seed_base: int,
                       horizon: float = 400.0, local_time_target: float = 1.0,
                       tolerances: Tolerances = DEFAULT_TOLERANCES,
                       map_fn: Callable = map, chunk: int = DEFAULT_CHUNK) -> ConvergenceReport:
    """
    Simulate, decompose and compare every index of the grid.

    Args:
        map_fn: map-like callable used for the simulation work items, e.g.
            a ThreadPoolExecutor's map; results are merged in replicate order

    Raises:
        FluctLabError: Any sub-step error, logged with its index first
    """
    limit = limit_parameters(preset, tolerances)
    outcomes = []
    for n in n_grid:
        try:
            context = index_context(preset, n, horizon, local_time_target, seed_base, tolerances)
            parts = list(map_fn(lambda item: simulate_index(context, *item), replicate_chunks(paths_per_n, chunk)))
            outcomes.append(evaluate_index(context, merge_index_samples(parts), limit, tolerances))
        except FluctLabError as e:
            logger.error(f"lab.index: {preset.preset_id} n={n} failed: {type(e).__name__}: {e}")
            raise
    return assemble_report(preset, outcomes, tolerances)


# ==============================================================================
# 7) WALK AND LIMIT-SAMPLER CHECKS
# ==============================================================================

def jump_chain_law(context: IndexContext) -> WalkLaw:
    """Walk law of the embedded jump chain of the rescaled path (exact record epochs)."""
    ctx = context

    def law(seed: int, min_records: Optional[int] = None):
        path = sample_marked_path_until(ctx.spec, ctx.mark, ctx.horizon_unscaled, seed,
                                        record_target=min_records, kill_depth=ctx.kill_depth)
        return jump_chain_walk(rescale_path(path, ctx.scaling))

    return law


def grid_walk_law(context: IndexContext, steps: int, k_max: int) -> WalkLaw:
    """Walk S(j) = rescaled path at j / steps, long enough for k_max steps."""
    ctx = context
    horizon = (k_max + 1) / steps * ctx.scaling.d_n

    def law(seed: int, min_records: Optional[int] = None):
        path = sample_marked_path_until(ctx.spec, ctx.mark, horizon, seed)
        return discretize_path(rescale_path(path, ctx.scaling), steps)

    return law


def walk_identity_check(context: IndexContext, replicates: int, walk_steps: int,
                        tolerances: Tolerances = DEFAULT_TOLERANCES) -> Tuple[DistanceReport, FristedtEstimate]:
    """
    kappa_n(1, 0) phi_n(1) = 1 through the walk ladder of the jump chain,
    plus the Fristedt estimate of the weight parameter of the grid walk
    with walk_steps steps per unit time.
    """
    ctx = context
    estimate = walk_ladder_exponent(jump_chain_law(ctx), ctx.scaling.alpha, 1.0, 0.0, replicates,
                                    seed_base=ctx.seed_base, n=ctx.n,
                                    max_censored_fraction=tolerances.max_censored_fraction)
    phi = phi_inverse(ctx.measure.spec, 1.0, tolerances)
    report = _kappa_phi_report("kappa*phi walk", ctx.n, estimate.exponent, estimate.standard_error, phi, replicates)
    log_report(logger, report)

    k_max = fristedt_k_max(walk_steps, tolerances.fristedt_tail)
    fristedt = fristedt_alpha(grid_walk_law(ctx, walk_steps, k_max), walk_steps, k_max, replicates,
                              seed_base=ctx.seed_base)
    return report, fristedt


def limit_sampler_check(limit: LimitSpec, draws: int, seed: int, local_time: float = 1.0,
                        tolerances: Tolerances = DEFAULT_TOLERANCES) -> DistanceReport:
    """
    Empirical E[exp(-beta H+(t) - gamma H^M(t)); alive] of sampled limit
    marginals against exp(-t * exponent(beta, gamma)) on a 3 x 3 grid.
    """
    spec = limit_subordinator(limit)
    h_plus, h_mark, alive = sample_marginals(spec, local_time, draws, seed)
    samples = SampleSet("limit subordinator", np.column_stack((h_plus, h_mark)), 1, (0, draws))
    gaps, errors = [], []
    for beta in LAPLACE_GRID:
        for gamma in LAPLACE_GRID:
            estimate, se = empirical_laplace(samples, beta, gamma, tolerances, alive=alive)
            gaps.append(abs(estimate - math.exp(-local_time * subordinator_exponent(spec, beta, gamma))))
            errors.append(se)
    report = DistanceReport(metric=Metric.LAPLACE_GAP, label="limit subordinator", n_index=0, value=max(gaps),
                            threshold=max(tolerances.z_critical * max(errors), tolerances.w1_floor),
                            sample_sizes=(draws,))
    log_report(logger, report)
    return report
