"""
Record jumps, local time at the supremum and the trivariate marked ladder
height process of a marked path.

Between jumps the drift is negative, so the supremum only moves at record
jumps. With i.i.d. Exp(alpha) weights tau_0, tau_1, ... the local time is

    L(t) = tau_0 + ... + tau_l(t),    l(t) = number of records up to t

so L(0) = tau_0 and record i (0-indexed) sits at local time
tau_0 + ... + tau_i. The ladder (H+, H-, H^M) accumulates overshoots,
undershoots and marks of the records over local time.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional, Tuple

import numpy as np

from .exceptions import HorizonTooShortError, SpecValidationError
from .path_simulator import STOP_HORIZON, STOP_KILLED, MarkedPath, scan_records
from .seeds import CLOCK_STREAM, make_generator, substream

logger = logging.getLogger(__name__)

# Weights drawn per block of the clock stream
CLOCK_BLOCK = 64


@dataclass(frozen=True)
class LadderPoint:
    record_time: float
    local_time: float
    overshoot: float
    undershoot: float
    mark: int

    @property
    def jump_size(self) -> float:
        return self.overshoot + self.undershoot


class RecordArrays(NamedTuple):
    """Column form of the record jumps of one path."""
    times: np.ndarray
    overshoots: np.ndarray
    undershoots: np.ndarray
    marks: np.ndarray
    sizes: np.ndarray
    levels: np.ndarray   # supremum right after each record


def extract_records(path: MarkedPath) -> RecordArrays:
    """Strict records of the path with overshoot post - S and undershoot S - pre."""
    post, pre, sup_before, is_record = scan_records(path.times, path.sizes, path.drift)
    idx = np.flatnonzero(is_record)
    overshoots = post[idx] - sup_before[idx]
    undershoots = np.maximum(sup_before[idx] - pre[idx], 0.0)
    return RecordArrays(path.times[idx], overshoots, undershoots, path.marks[idx].astype(np.int8),
                        path.sizes[idx], post[idx])


def record_decomposition(path: MarkedPath) -> List[LadderPoint]:
    """Record jumps as ladder points; local_time is NaN until a clock is attached."""
    rec = extract_records(path)
    return [LadderPoint(float(t), math.nan, float(o), float(u), int(m))
            for t, o, u, m in zip(rec.times, rec.overshoots, rec.undershoots, rec.marks)]


def clock_weights(seed: int, alpha: float, count: int) -> np.ndarray:
    """First count weights of the clock stream of a replicate seed."""
    if not alpha > 0:
        raise SpecValidationError(f"alpha must be positive, got {alpha}", "alpha")
    rng = make_generator(substream(seed, CLOCK_STREAM))
    blocks = max(1, -(-count // CLOCK_BLOCK))
    return np.concatenate([rng.exponential(1.0 / alpha, CLOCK_BLOCK) for _ in range(blocks)])[:count]


def records_needed(seed: int, alpha: float, local_time: float) -> int:
    """Smallest m with tau_0 + ... + tau_m > local_time: records to observe before L exceeds it."""
    rng = make_generator(substream(seed, CLOCK_STREAM))
    total, offset = 0.0, 0
    while True:
        cum = total + np.cumsum(rng.exponential(1.0 / alpha, CLOCK_BLOCK))
        hit = np.flatnonzero(cum > local_time)
        if hit.size:
            return offset + int(hit[0])
        total, offset = float(cum[-1]), offset + CLOCK_BLOCK


@dataclass(frozen=True, eq=False)
class LocalTimeClock:
    alpha: float
    weights: np.ndarray
    record_times: np.ndarray
    horizon: float

    def __post_init__(self):
        if len(self.weights) != len(self.record_times) + 1:
            raise SpecValidationError("a clock needs one weight more than records", "weights")

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.weights)

    def jump_count(self, t):
        """l(t): records with time <= t."""
        return np.searchsorted(self.record_times, np.asarray(t, dtype=float), side="right")

    def value(self, t):
        """L(t) = tau_0 + ... + tau_l(t)."""
        return self.cumulative[self.jump_count(t)]

    def inverse(self, s):
        """L^{-1}(s) = inf{u : L(u) > s}; inf once s reaches the final local time."""
        s = np.asarray(s, dtype=float)
        cum = self.cumulative
        j = np.searchsorted(cum, s, side="right")
        times = np.concatenate(([0.0], self.record_times, [np.inf]))
        return times[j]


def local_time_clock(points: Iterable[LadderPoint], alpha: float, horizon: float, seed: int) -> LocalTimeClock:
    """Clock with weights tau_0..tau_k (k = number of records) from the seed's clock stream."""
    record_times = np.array([p.record_time for p in points], dtype=float)
    weights = clock_weights(seed, alpha, len(record_times) + 1)
    return LocalTimeClock(alpha=alpha, weights=weights, record_times=record_times, horizon=horizon)


@dataclass(frozen=True, eq=False)
class LadderProcess:
    """
    Trivariate ladder (H+, H-, H^M) over local time.

    known_until is the local time up to which the ladder is determined:
    total_local_time for censored or record-stopped paths, inf when killed.
    """
    record_times: np.ndarray
    local_times: np.ndarray
    overshoots: np.ndarray
    undershoots: np.ndarray
    marks: np.ndarray
    levels: np.ndarray
    clock: LocalTimeClock
    total_local_time: float
    stop_reason: str
    stopped_at: float

    @property
    def censored(self) -> bool:
        return self.stop_reason == STOP_HORIZON

    @property
    def killed(self) -> bool:
        return self.stop_reason == STOP_KILLED

    @property
    def known_until(self) -> float:
        return np.inf if self.killed else self.total_local_time

    @property
    def points(self) -> List[LadderPoint]:
        return [LadderPoint(float(t), float(s), float(o), float(u), int(m)) for t, s, o, u, m in
                zip(self.record_times, self.local_times, self.overshoots, self.undershoots, self.marks)]

    def is_known(self, t) -> np.ndarray:
        return np.asarray(t, dtype=float) < self.known_until

    def _count(self, t):
        return np.searchsorted(self.local_times, np.asarray(t, dtype=float), side="right")

    def h_plus(self, t):
        """Supremum level after the last record at local time <= t."""
        return np.concatenate(([0.0], self.levels))[self._count(t)]

    def h_minus(self, t):
        return np.concatenate(([0.0], np.cumsum(self.undershoots)))[self._count(t)]

    def h_mark(self, t):
        return np.concatenate(([0], np.cumsum(self.marks.astype(np.int64))))[self._count(t)]

    def inverse_local_time(self, s):
        """Path time L^{-1}(s); inf when s is at or beyond the final local time."""
        return self.clock.inverse(s)


def trivariate_ladder(points: Iterable[LadderPoint], clock: LocalTimeClock, stop_reason: str = STOP_HORIZON,
                      stopped_at: Optional[float] = None) -> LadderProcess:
    """Attach local times tau_0 + ... + tau_i to the records."""
    points = list(points)
    cum = clock.cumulative
    return LadderProcess(
        record_times=np.array([p.record_time for p in points], dtype=float),
        local_times=cum[:len(points)].copy(),
        overshoots=np.array([p.overshoot for p in points], dtype=float),
        undershoots=np.array([p.undershoot for p in points], dtype=float),
        marks=np.array([p.mark for p in points], dtype=np.int8),
        levels=np.cumsum([p.overshoot for p in points]) if points else np.empty(0),
        clock=clock,
        total_local_time=float(cum[len(points)]),
        stop_reason=stop_reason,
        stopped_at=clock.horizon if stopped_at is None else float(stopped_at),
    )


def build_ladder(path: MarkedPath, alpha: float) -> LadderProcess:
    """Records, clock and ladder of a path in one vectorised pass."""
    rec = extract_records(path)
    weights = clock_weights(path.seed, alpha, len(rec.times) + 1)
    clock = LocalTimeClock(alpha=alpha, weights=weights, record_times=rec.times, horizon=path.stopped_at)
    cum = clock.cumulative
    ladder = LadderProcess(
        record_times=rec.times,
        local_times=cum[:-1],
        overshoots=rec.overshoots,
        undershoots=rec.undershoots,
        marks=rec.marks,
        levels=rec.levels,
        clock=clock,
        total_local_time=float(cum[-1]),
        stop_reason=path.stop_reason,
        stopped_at=path.stopped_at,
    )
    logger.debug(f"ladder.build: seed={path.seed} records={len(rec.times)} "
                 f"L={ladder.total_local_time:.6g} stop={path.stop_reason}")
    return ladder


class MarkTime(NamedTuple):
    """First mark time in local-time units, or the exposure when censored."""
    value: float
    censored: bool


def first_mark_time(ladder: LadderProcess) -> MarkTime:
    marked = np.flatnonzero(ladder.marks)
    if marked.size:
        return MarkTime(float(ladder.local_times[marked[0]]), False)
    return MarkTime(float(ladder.total_local_time), True)


def marginals_at(ladder: LadderProcess, t: float) -> Optional[Tuple[float, float, int]]:
    """(H+(t), H-(t), H^M(t)); stopped values for killed ladders, None when not determined."""
    if not ladder.is_known(t):
        return None
    return float(ladder.h_plus(t)), float(ladder.h_minus(t)), int(ladder.h_mark(t))


def ladder_exponent(ladders: Iterable[LadderProcess], delta: float, beta: float, local_time: float = 1.0,
                    max_censored_fraction: float = 0.05) -> Tuple[float, float]:
    """
    -log of the mean of exp(-delta L^{-1}(t) - beta H+(t)) over ladders.

    Killed ladders (L^{-1}(t) = inf) contribute 0; undetermined ladders
    are excluded.

    Returns:
        (exponent, censored fraction)

    Raises:
        HorizonTooShortError: If the censored fraction exceeds the limit
    """
    values, censored, total = [], 0, 0
    for ladder in ladders:
        total += 1
        if ladder.killed and local_time >= ladder.total_local_time:
            values.append(0.0)
        elif not ladder.is_known(local_time):
            censored += 1
        else:
            values.append(math.exp(-delta * float(ladder.inverse_local_time(local_time))
                                   - beta * float(ladder.h_plus(local_time))))
    fraction = censored / total if total else 0.0
    if fraction > max_censored_fraction:
        raise HorizonTooShortError(f"{fraction:.1%} of ladders undetermined at local time {local_time}",
                                   censored_fraction=fraction, limit=max_censored_fraction)
    mean = float(np.mean(values)) if values else 0.0
    return (-math.log(mean) if mean > 0 else np.inf), fraction


def pool_records(ladders: Iterable[LadderProcess]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenated (undershoot, overshoot, mark) of all ladder points."""
    ladders = list(ladders)
    if not ladders:
        return np.empty(0), np.empty(0), np.empty(0, dtype=np.int8)
    return (np.concatenate([l.undershoots for l in ladders]),
            np.concatenate([l.overshoots for l in ladders]),
            np.concatenate([l.marks for l in ladders]))
