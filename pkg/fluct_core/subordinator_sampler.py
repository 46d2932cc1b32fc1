"""
Limit marked ladder subordinator H = (H+, H^M).

H+ has drift b^2 / 2 and compound Poisson jumps from mu; H^M counts the
marks carried by those jumps plus an independent Poisson stream of pure
marks (theta under B1, rho = kappa b^2 under B2). A single Exp(kill) clock
kills both coordinates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .exceptions import SpecValidationError, UnsupportedFamilyError, UnsupportedMeasureError
from .levy_calculus import LadderMeasure, LimitSpec
from .seeds import make_generator, validate_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubordinatorSpec:
    drift_plus: float = 0.0
    jump_measure: Optional[LadderMeasure] = None
    independent_mark_rate: float = 0.0
    kill: float = 0.0

    def __post_init__(self):
        if self.drift_plus < 0 or self.independent_mark_rate < 0 or self.kill < 0:
            raise SpecValidationError("subordinator drift, mark rate and kill must be nonnegative")

    @property
    def jump_mass(self) -> float:
        return 0.0 if self.jump_measure is None else self.jump_measure.mu_plus_mass

    def _require_finite(self):
        if not np.isfinite(self.jump_mass):
            raise UnsupportedMeasureError("exact subordinator sampling needs a finite jump mass",
                                          total_mass=self.jump_mass)

    def describe(self) -> dict:
        return {
            "drift_plus": self.drift_plus,
            "jump_mass": self.jump_mass,
            "independent_mark_rate": self.independent_mark_rate,
            "kill": self.kill,
        }


@dataclass(frozen=True, eq=False)
class SubordinatorPath:
    horizon: float
    drift_plus: float
    times: np.ndarray
    d_plus: np.ndarray
    d_mark: np.ndarray
    kill_time: float

    def alive(self, t):
        return np.asarray(t, dtype=float) < self.kill_time

    def _count(self, t):
        return np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")

    def h_plus(self, t):
        """H+(t), stopped at the kill time."""
        t = np.minimum(np.asarray(t, dtype=float), min(self.kill_time, self.horizon))
        return self.drift_plus * t + np.concatenate(([0.0], np.cumsum(self.d_plus)))[self._count(t)]

    def h_mark(self, t):
        t = np.minimum(np.asarray(t, dtype=float), min(self.kill_time, self.horizon))
        return np.concatenate(([0], np.cumsum(self.d_mark)))[self._count(t)]


def limit_subordinator(limit: LimitSpec) -> SubordinatorSpec:
    """Subordinator of the limit theorem: drift b^2/2, independent marks, shared kill."""
    if not limit.limit_measure.is_zero:
        raise UnsupportedFamilyError("limit subordinator sampling supports jump-free limits only")
    return SubordinatorSpec(drift_plus=limit.b2 / 2.0, jump_measure=None,
                            independent_mark_rate=limit.mark_rate, kill=limit.kill)


def sample_subordinator(spec: SubordinatorSpec, horizon: float, seed: int) -> SubordinatorPath:
    """
    Event-list path of H on [0, horizon], truncated at the kill time.

    Raises:
        UnsupportedMeasureError: If the jump measure has infinite mass
    """
    if not horizon > 0:
        raise SpecValidationError("horizon must be positive", "horizon")
    spec._require_finite()
    rng = make_generator(validate_seed(seed))
    kill_time = rng.exponential(1.0 / spec.kill) if spec.kill > 0 else np.inf

    n_jumps = rng.poisson(spec.jump_mass * horizon)
    jump_times = rng.uniform(0.0, horizon, n_jumps)
    if n_jumps:
        _, overshoots, jump_marks = spec.jump_measure.sample(rng, n_jumps)
    else:
        overshoots, jump_marks = np.empty(0), np.empty(0, dtype=np.int8)
    n_marks = rng.poisson(spec.independent_mark_rate * horizon)
    mark_times = rng.uniform(0.0, horizon, n_marks)

    times = np.concatenate((jump_times, mark_times))
    d_plus = np.concatenate((overshoots, np.zeros(n_marks)))
    d_mark = np.concatenate((jump_marks.astype(np.int64), np.ones(n_marks, dtype=np.int64)))
    order = np.argsort(times, kind="stable")
    times, d_plus, d_mark = times[order], d_plus[order], d_mark[order]
    keep = times < min(kill_time, horizon) if np.isfinite(kill_time) else times <= horizon
    return SubordinatorPath(horizon=horizon, drift_plus=spec.drift_plus, times=times[keep],
                            d_plus=d_plus[keep], d_mark=d_mark[keep], kill_time=float(kill_time))


def sample_marginals(spec: SubordinatorSpec, t: float, size: int, seed: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    size independent draws of (H+(t), H^M(t), alive at t) without building paths.

    Killed draws carry the values stopped at their kill time.
    """
    spec._require_finite()
    rng = make_generator(validate_seed(seed))
    kill_times = rng.exponential(1.0 / spec.kill, size) if spec.kill > 0 else np.full(size, np.inf)
    alive = kill_times > t
    run = np.minimum(kill_times, t)

    counts = rng.poisson(spec.jump_mass * run)
    h_plus = spec.drift_plus * run
    h_mark = rng.poisson(spec.independent_mark_rate * run).astype(np.int64)
    total = int(counts.sum())
    if total:
        _, overshoots, marks = spec.jump_measure.sample(rng, total)
        owner = np.repeat(np.arange(size), counts)
        h_plus = h_plus + np.bincount(owner, weights=overshoots, minlength=size)
        h_mark = h_mark + np.bincount(owner, weights=marks, minlength=size).astype(np.int64)
    return h_plus, h_mark, alive


def subordinator_exponent(spec: SubordinatorSpec, beta: float, gamma: float) -> float:
    """
    kill + drift_plus beta + rate (1 - e^{-gamma}) + integral (1 - e^{-beta y - gamma q}) mu,
    so that E[exp(-beta H+(1) - gamma H^M(1)); alive] = exp(-exponent).
    """
    if beta < 0 or gamma < 0:
        raise SpecValidationError("beta and gamma must be nonnegative")
    value = spec.kill + spec.drift_plus * beta - spec.independent_mark_rate * math.expm1(-gamma)
    if spec.jump_measure is not None:
        value += spec.jump_measure.laplace_integral(beta, gamma)
    return value
