"""
Exact simulation of marked finite-variation paths.

A path is drift * t plus a compound Poisson sum of positive jumps, so it is
stored losslessly as its event list. Events are generated in fixed-size
chunks from one Philox stream per seed:

    gaps  ~ Exp(total_mass)            (CHUNK draws)
    sizes ~ Lambda / total_mass        (CHUNK draws)
    marks = U < g(size), U ~ U(0, 1)   (CHUNK draws)

Because the chunk layout never depends on the stopping rule, every
early-stopped path is an exact prefix of the full-horizon path with the
same seed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .exceptions import HorizonTooShortError, SpecValidationError, UnsupportedMeasureError
from .seeds import make_generator, replicate_seed, validate_seed
from .specs import MarkRule, ProcessSpec, ScalingParams

logger = logging.getLogger(__name__)

# Events drawn per chunk
EVENT_CHUNK = 4096

# Stop reasons
STOP_HORIZON = "horizon"
STOP_RECORDS = "records"
STOP_KILLED = "killed"


@dataclass(frozen=True)
class JumpEvent:
    time: float
    size: float
    mark: int


def _frozen(values, dtype) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class MarkedPath:
    """
    Event-list path. The path is exactly known on [0, stopped_at];
    stopped_at equals horizon unless generation stopped early.
    """
    drift: float
    horizon: float
    times: np.ndarray
    sizes: np.ndarray
    marks: np.ndarray
    seed: int
    stopped_at: float = np.nan
    stop_reason: str = STOP_HORIZON
    _levels: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(self.times, float))
        object.__setattr__(self, "sizes", _frozen(self.sizes, float))
        object.__setattr__(self, "marks", _frozen(self.marks, np.int8))
        if np.isnan(self.stopped_at):
            object.__setattr__(self, "stopped_at", float(self.horizon))
        if not self.drift < 0:
            raise SpecValidationError("path drift must be negative", "drift")
        if not (len(self.times) == len(self.sizes) == len(self.marks)):
            raise SpecValidationError("event arrays differ in length", "events")
        if len(self.times):
            if self.times[0] <= 0 or self.times[-1] > self.stopped_at or np.any(np.diff(self.times) <= 0):
                raise SpecValidationError("event times must be strictly increasing in (0, stopped_at]", "times")
            if np.any(self.sizes <= 0):
                raise SpecValidationError("jump sizes must be positive", "sizes")
        object.__setattr__(self, "_levels", _frozen(np.concatenate(([0.0], np.cumsum(self.sizes))), float))

    @property
    def events(self) -> List[JumpEvent]:
        return [JumpEvent(float(t), float(s), int(m)) for t, s, m in zip(self.times, self.sizes, self.marks)]

    @property
    def event_count(self) -> int:
        return len(self.times)

    def value(self, t):
        """drift * t + sum of sizes of events with time <= t."""
        t = np.asarray(t, dtype=float)
        return self.drift * t + self._levels[np.searchsorted(self.times, t, side="right")]

    def value_left(self, t):
        """Left limit: events at exactly t are excluded."""
        t = np.asarray(t, dtype=float)
        return self.drift * t + self._levels[np.searchsorted(self.times, t, side="left")]

    def supremum(self, t):
        """Running supremum sup_{s <= t} value(s); attained at 0 or at event times."""
        t = np.asarray(t, dtype=float)
        post = self.drift * self.times + self._levels[1:]
        running = np.concatenate(([0.0], np.maximum.accumulate(np.maximum(post, 0.0)))) if len(post) else np.zeros(1)
        return running[np.searchsorted(self.times, t, side="right")]


def scan_records(times: np.ndarray, sizes: np.ndarray, drift: float,
                 level: float = 0.0, sup: float = 0.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorised record scan of a block of events.

    Args:
        times, sizes: Event block in time order
        drift: Path drift
        level: Sum of sizes of all earlier events
        sup: Running supremum before the block

    Returns:
        (post, pre, sup_before, is_record): post-jump value, pre-jump value,
        supremum just before each event, and the strict record flag
    """
    post = drift * times + level + np.cumsum(sizes)
    pre = post - sizes
    if len(post) == 0:
        return post, pre, np.empty(0), np.empty(0, dtype=bool)
    running = np.maximum.accumulate(np.maximum(post, sup))
    sup_before = np.concatenate(([sup], running[:-1]))
    return post, pre, sup_before, post > sup_before


def _event_chunks(spec: ProcessSpec, mark: MarkRule, rng: np.random.Generator) -> Iterator[Tuple[np.ndarray, ...]]:
    mass = spec.levy_measure.total_mass
    clock = 0.0
    while True:
        gaps = rng.exponential(1.0 / mass, EVENT_CHUNK)
        sizes = spec.levy_measure.sample(rng, EVENT_CHUNK)
        marks = (rng.random(EVENT_CHUNK) < mark.probability(sizes)).astype(np.int8)
        times = clock + np.cumsum(gaps)
        clock = times[-1]
        yield times, sizes, marks


def _check_sampling(spec: ProcessSpec, horizon: float):
    if not (horizon > 0 and np.isfinite(horizon)):
        raise SpecValidationError(f"horizon must be positive and finite, got {horizon}", "horizon")
    if not spec.levy_measure.is_finite:
        raise UnsupportedMeasureError(
            "path simulation needs a finite-mass Levy measure; use a truncated preset (positive cutoff)",
            total_mass=spec.levy_measure.total_mass,
        )


def sample_marked_path(spec: ProcessSpec, mark: MarkRule, horizon: float, seed: int) -> MarkedPath:
    """
    Simulate (Z, Z^M) on [0, horizon].

    Raises:
        UnsupportedMeasureError: If the Levy measure has infinite mass
    """
    return sample_marked_path_until(spec, mark, horizon, seed)


def sample_marked_path_until(spec: ProcessSpec, mark: MarkRule, horizon: float, seed: int,
                             record_target: Optional[int] = None, kill_depth: float = np.inf) -> MarkedPath:
    """
    Simulate until the earliest of: the record_target-th strict record, the
    depth below the running supremum reaching kill_depth, or the horizon.

    Args:
        spec: Unscaled process spec with finite total mass
        mark: Mark rule on the unscaled jump sizes of spec
        horizon: Final time
        seed: 64-bit seed of the Philox stream
        record_target: Stop right after this many records (None: never)
        kill_depth: Declare the path killed at this depth (inf: never)

    Returns:
        MarkedPath with stopped_at and stop_reason set
    """
    _check_sampling(spec, horizon)
    seed = validate_seed(seed)
    if record_target is not None and record_target < 1:
        raise SpecValidationError("record_target must be a positive integer", "record_target")
    if spec.levy_measure.is_zero:
        stop_at, reason = _drift_kill(spec.drift, 0.0, 0.0, 0.0, horizon, kill_depth)
        return MarkedPath(spec.drift, horizon, [], [], [], seed, stop_at, reason)

    rng = make_generator(seed)
    kept_times: List[np.ndarray] = []
    kept_sizes: List[np.ndarray] = []
    kept_marks: List[np.ndarray] = []
    level = sup = last_time = last_post = 0.0
    records = 0
    stop_at, reason = horizon, STOP_HORIZON

    for times, sizes, marks in _event_chunks(spec, mark, rng):
        inside = int(np.searchsorted(times, horizon, side="right"))
        times, sizes, marks = times[:inside], sizes[:inside], marks[:inside]
        post, pre, sup_before, is_record = scan_records(times, sizes, spec.drift, level, sup)

        cut = len(times)
        depth = sup_before - pre
        killed = np.flatnonzero(depth >= kill_depth)
        if killed.size:
            cut = int(killed[0])
            reason = STOP_KILLED
        if record_target is not None:
            counts = records + np.cumsum(is_record)
            reached = np.flatnonzero(counts >= record_target)
            if reached.size and reached[0] < cut:
                cut = int(reached[0]) + 1
                reason = STOP_RECORDS

        kept_times.append(times[:cut])
        kept_sizes.append(sizes[:cut])
        kept_marks.append(marks[:cut])
        if cut:
            level += float(np.sum(sizes[:cut]))
            sup = max(sup, float(np.max(post[:cut])))
            records += int(np.sum(is_record[:cut]))
            last_time, last_post = float(times[cut - 1]), float(post[cut - 1])

        if reason == STOP_RECORDS:
            stop_at = last_time
            break
        if reason == STOP_KILLED:
            stop_at = last_time + (sup - last_post - kill_depth) / spec.drift
            break
        if inside < EVENT_CHUNK:
            stop_at, reason = _drift_kill(spec.drift, last_time, last_post, sup, horizon, kill_depth)
            break

    path = MarkedPath(spec.drift, horizon, np.concatenate(kept_times), np.concatenate(kept_sizes),
                      np.concatenate(kept_marks), seed, stop_at, reason)
    logger.debug(f"sim.path: seed={seed} events={path.event_count} records={records} "
                 f"stop={reason}@{stop_at:.6g}")
    return path


def _drift_kill(drift: float, last_time: float, last_post: float, sup: float,
                horizon: float, kill_depth: float) -> Tuple[float, str]:
    # depth after the last event grows at rate |drift|
    if np.isfinite(kill_depth):
        kill_time = last_time + (sup - last_post - kill_depth) / drift
        if kill_time <= horizon:
            return max(kill_time, last_time), STOP_KILLED
    return horizon, STOP_HORIZON


def replicate_paths(spec: ProcessSpec, mark: MarkRule, horizon: float, base_seed: int,
                    count: int, start: int = 0) -> Iterator[MarkedPath]:
    """Replicates i = start..start+count-1 with seed base XOR i."""
    for i in range(start, start + count):
        yield sample_marked_path(spec, mark, horizon, replicate_seed(base_seed, i))


def rescale_path(path: MarkedPath, scaling: ScalingParams, target_horizon: Optional[float] = None) -> MarkedPath:
    """
    Path of (1/n) Z(d_n t): times / d_n, sizes / n, drift * d_n / n.

    Raises:
        HorizonTooShortError: If the rescaled horizon is below target_horizon
    """
    horizon = path.horizon / scaling.d_n
    if target_horizon is not None and horizon < target_horizon:
        raise HorizonTooShortError(
            f"unscaled horizon {path.horizon:g} < d_n * target = {scaling.d_n * target_horizon:g}",
            limit=target_horizon,
        )
    return MarkedPath(
        drift=path.drift * scaling.d_n / scaling.n,
        horizon=horizon,
        times=path.times / scaling.d_n,
        sizes=path.sizes / scaling.n,
        marks=path.marks,
        seed=path.seed,
        stopped_at=path.stopped_at / scaling.d_n,
        stop_reason=path.stop_reason,
    )


def path_rows(path: MarkedPath) -> List[Tuple[float, float, int]]:
    """(time, size, mark) rows for the CSV path dump."""
    return [(float(t), float(s), int(m)) for t, s, m in zip(path.times, path.sizes, path.marks)]
