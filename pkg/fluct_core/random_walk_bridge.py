"""
Random walks from marked paths and their ladder constructions.

Two walks come out of a path:
    discretize_path   S(j) = Z(j / k), uniform step 1/k
    jump_chain_walk   S(j) = Z just after the j-th jump, with the jump times

The walk ladder uses strict ascending ladder epochs and i.i.d. Exp(alpha)
weights: T(1) = epoch number N_1 with N_1 ~ Poisson(alpha), G(1) = S at
that epoch. Fristedt's formula fixes the weight parameter

    alpha_n = exp( sum_k (1/k) e^{-k/n} P(S(k) > 0) ).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .exceptions import HorizonTooShortError, PrecisionFailureError, SpecValidationError
from .path_simulator import STOP_KILLED, MarkedPath
from .seeds import FRISTEDT_STREAM, WALK_STREAM, experiment_seed, make_generator, substream

logger = logging.getLogger(__name__)

# Hard cap on the Fristedt truncation index
MAX_FRISTEDT_TERMS = 10_000_000


@dataclass(frozen=True, eq=False)
class WalkSample:
    """
    Walk S(0) = 0, S(1), ... with uniform step, or with explicit epoch times.

    complete marks a walk whose source path was killed, so no further
    ladder epochs exist beyond the recorded values.
    """
    step: float
    values: np.ndarray
    source_seed: int
    times: Optional[np.ndarray] = None
    complete: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.size == 0 or values[0] != 0:
            raise SpecValidationError("a walk starts at S(0) = 0", "values")
        if self.times is None:
            if not self.step > 0:
                raise SpecValidationError("a uniform walk needs a positive step", "step")
        else:
            times = np.asarray(self.times, dtype=float)
            object.__setattr__(self, "times", times)
            if times.shape != values.shape:
                raise SpecValidationError("walk times and values differ in length", "times")

    def epoch_time(self, index):
        """Path time of step index."""
        index = np.asarray(index)
        if self.times is not None:
            return self.times[index]
        return index * self.step

    def ladder_epochs(self) -> np.ndarray:
        """Strict ascending ladder epochs t(1) < t(2) < ... (t(0) = 0 omitted)."""
        values = self.values
        if values.size < 2:
            return np.empty(0, dtype=np.int64)
        before = np.maximum.accumulate(values)[:-1]
        return np.flatnonzero(values[1:] > before) + 1


# Walk laws map (seed, records hint) to a walk; the hint asks for at least that many ladder epochs
WalkLaw = Callable[[int, Optional[int]], WalkSample]


def discretize_path(path: MarkedPath, k: int) -> WalkSample:
    """
    S(j) = path value at j / k for j = 0 .. floor(k * stopped_at).

    Raises:
        SpecValidationError: If k * stopped_at < 1
    """
    if int(k) != k or k < 1:
        raise SpecValidationError(f"k must be a positive integer, got {k}", "k")
    steps = int(math.floor(k * path.stopped_at))
    if steps < 1:
        raise SpecValidationError("k * horizon must be at least 1", "k")
    grid = np.arange(steps + 1) / k
    values = path.value(grid)
    values[0] = 0.0
    return WalkSample(step=1.0 / k, values=values, source_seed=path.seed)


def jump_chain_walk(path: MarkedPath) -> WalkSample:
    """Embedded chain of post-jump values with their times."""
    post = path.value(path.times) if path.event_count else np.empty(0)
    return WalkSample(
        step=path.stopped_at / max(1, path.event_count),
        values=np.concatenate(([0.0], post)),
        source_seed=path.seed,
        times=np.concatenate(([0.0], path.times)),
        complete=path.stop_reason == STOP_KILLED,
    )


def fristedt_k_max(n: int, tail: float) -> int:
    """Smallest K with e^{-K/n} / (K (1 - e^{-1/n})) < tail."""
    denominator = -math.expm1(-1.0 / n)
    K = 1
    while math.exp(-K / n) / (K * denominator) >= tail:
        K = K * 2 if K < n else K + max(1, n // 4)
        if K > MAX_FRISTEDT_TERMS:
            raise SpecValidationError(f"Fristedt truncation exceeds {MAX_FRISTEDT_TERMS} terms", "k_max")
    lo = max(1, K // 2)
    while lo < K and math.exp(-lo / n) / (lo * denominator) >= tail:
        lo += 1
    return lo


def fristedt_seed(seed_base: int, n: int, r: int) -> int:
    """Walk seed of Fristedt replicate r; a sub-stream apart from the path seeds of any index."""
    return substream(experiment_seed(seed_base, n, r), FRISTEDT_STREAM)


class FristedtEstimate(NamedTuple):
    alpha: float
    standard_error: float
    k_max: int
    tail_bound: float
    replicates: int


def fristedt_alpha(walk_law: WalkLaw, n: int, k_max: int, replicates: int, seed_base: int = 0,
                   target_se: Optional[float] = None) -> FristedtEstimate:
    """
    Monte Carlo estimate of exp(sum_{k <= k_max} (1/k) e^{-k/n} P(S(k) > 0)).

    Each replicate contributes X = sum_k (1/k) e^{-k/n} 1{S(k) > 0}; the
    estimate is exp(mean X) with delta-method s.e. alpha * sd(X) / sqrt(R).

    Raises:
        SpecValidationError: If a walk is shorter than k_max
        PrecisionFailureError: If target_se is given and not reached
    """
    if replicates < 2:
        raise PrecisionFailureError("Fristedt estimate needs at least 2 replicates", required=2)
    k = np.arange(1, k_max + 1)
    weights = np.exp(-k / n) / k
    stats = np.empty(replicates)
    for r in range(replicates):
        walk = walk_law(fristedt_seed(seed_base, n, r), None)
        if walk.values.size <= k_max:
            raise SpecValidationError(f"walk of length {walk.values.size - 1} shorter than k_max={k_max}", "k_max")
        stats[r] = float(np.dot(weights, walk.values[1:k_max + 1] > 0))
    alpha = math.exp(float(np.mean(stats)))
    se = alpha * float(np.std(stats, ddof=1)) / math.sqrt(replicates)
    tail = math.exp(-k_max / n) / (k_max * -math.expm1(-1.0 / n))
    logger.info(f"walk.fristedt: n={n} alpha={alpha:.6g} se={se:.3g} k_max={k_max} R={replicates}")
    if target_se is not None and se > target_se:
        raise PrecisionFailureError(f"Fristedt s.e. {se:.3g} above target {target_se:.3g}; add replicates",
                                    achieved_se=se, required=target_se)
    return FristedtEstimate(alpha, se, k_max, tail, replicates)


class WalkLadderEstimate(NamedTuple):
    exponent: float
    standard_error: float
    censored_fraction: float
    replicates: int


def walk_ladder_exponent(walk_law: WalkLaw, alpha: float, delta: float, beta: float, replicates: int,
                         seed_base: int = 0, n: int = 0, max_censored_fraction: float = 0.05) -> WalkLadderEstimate:
    """
    -log of the Monte Carlo mean of exp(-delta T(1) - beta G(1)).

    Walks whose ladder is exhausted before epoch N_1 contribute 0; they are
    killed when the walk is complete and censored otherwise.

    Raises:
        HorizonTooShortError: If the censored fraction exceeds the limit
    """
    if not alpha > 0:
        raise SpecValidationError("alpha must be positive", "alpha")
    values = np.zeros(replicates)
    censored = 0
    for r in range(replicates):
        seed = experiment_seed(seed_base, n, r)
        needed = int(make_generator(substream(seed, WALK_STREAM)).poisson(alpha))
        if needed == 0:
            values[r] = 1.0
            continue
        walk = walk_law(seed, needed)
        epochs = walk.ladder_epochs()
        if epochs.size >= needed:
            epoch = epochs[needed - 1]
            values[r] = math.exp(-delta * float(walk.epoch_time(epoch)) - beta * float(walk.values[epoch]))
        elif not walk.complete:
            censored += 1
    fraction = censored / replicates
    if fraction > max_censored_fraction:
        raise HorizonTooShortError(f"{fraction:.1%} of walks censored before the ladder epoch",
                                   censored_fraction=fraction, limit=max_censored_fraction)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1)) / (math.sqrt(replicates) * mean) if mean > 0 and replicates > 1 else np.inf
    exponent = -math.log(mean) if mean > 0 else np.inf
    logger.info(f"walk.ladder: alpha={alpha:.6g} delta={delta:g} beta={beta:g} exponent={exponent:.6g} "
                f"censored={fraction:.2%}")
    return WalkLadderEstimate(exponent, se, fraction, replicates)
