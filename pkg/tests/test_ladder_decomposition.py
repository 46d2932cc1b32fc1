import math

import numpy as np
import pytest
from scipy import stats

from fluct_core.exceptions import HorizonTooShortError, SpecValidationError
from fluct_core.ladder_decomposition import (build_ladder, clock_weights, extract_records, first_mark_time,
                                             ladder_exponent, local_time_clock, marginals_at, pool_records,
                                             record_decomposition, records_needed, trivariate_ladder)
from fluct_core.levy_calculus import kill_depth
from fluct_core.path_simulator import STOP_KILLED, MarkedPath, sample_marked_path, sample_marked_path_until
from fluct_core.specs import MarkRule, NO_MARKS


@pytest.fixture
def hand_path():
    return MarkedPath(drift=-1.0, horizon=5.0, times=[1.0, 2.0, 4.0], sizes=[3.0, 0.5, 3.0],
                      marks=[1, 0, 1], seed=7)


def test_extract_records(hand_path):
    rec = extract_records(hand_path)
    np.testing.assert_allclose(rec.times, [1.0, 4.0])
    np.testing.assert_allclose(rec.overshoots, [2.0, 0.5])
    np.testing.assert_allclose(rec.undershoots, [1.0, 2.5])
    np.testing.assert_allclose(rec.levels, [2.0, 2.5])
    np.testing.assert_array_equal(rec.marks, [1, 1])
    # overshoot + undershoot is the jump size
    np.testing.assert_allclose(rec.overshoots + rec.undershoots, rec.sizes)


def test_record_decomposition_without_clock(hand_path):
    points = record_decomposition(hand_path)
    assert [p.record_time for p in points] == [1.0, 4.0]
    assert all(math.isnan(p.local_time) for p in points)
    assert points[1].jump_size == pytest.approx(3.0)


def test_clock_weights_prefix_stable():
    long = clock_weights(42, 2.0, 200)
    np.testing.assert_array_equal(clock_weights(42, 2.0, 5), long[:5])
    with pytest.raises(SpecValidationError):
        clock_weights(42, 0.0, 3)


def test_build_ladder_local_times(hand_path):
    ladder = build_ladder(hand_path, alpha=1.0)
    cum = np.cumsum(clock_weights(hand_path.seed, 1.0, 3))
    # L(0) = tau_0 and record i sits at tau_0 + ... + tau_i
    np.testing.assert_allclose(ladder.local_times, cum[:2])
    assert ladder.total_local_time == pytest.approx(cum[2])
    assert ladder.clock.value(0.0) == pytest.approx(cum[0])
    assert ladder.clock.value(4.5) == pytest.approx(cum[2])
    assert ladder.censored and not ladder.killed

    s = 0.5 * (cum[0] + cum[1])
    assert float(ladder.h_plus(s)) == pytest.approx(2.0)
    assert float(ladder.h_minus(s)) == pytest.approx(1.0)
    assert int(ladder.h_mark(s)) == 1
    assert float(ladder.h_plus(cum[1])) == pytest.approx(2.5)
    assert float(ladder.inverse_local_time(0.5 * cum[0])) == 0.0
    assert float(ladder.inverse_local_time(s)) == 1.0
    assert ladder.inverse_local_time(cum[2]) == np.inf


def test_trivariate_ladder_matches_build_ladder(hand_path):
    points = record_decomposition(hand_path)
    clock = local_time_clock(points, 1.0, hand_path.stopped_at, hand_path.seed)
    ladder = trivariate_ladder(points, clock)
    built = build_ladder(hand_path, alpha=1.0)
    np.testing.assert_allclose(ladder.local_times, built.local_times)
    np.testing.assert_allclose(ladder.levels, built.levels)
    assert ladder.total_local_time == built.total_local_time


def test_records_needed_agrees_with_weights():
    for target in (0.1, 1.0, 7.5):
        m = records_needed(99, 1.5, target)
        cum = np.cumsum(clock_weights(99, 1.5, m + 1))
        assert cum[m] > target
        assert m == 0 or cum[m - 1] <= target


def test_censored_ladder_is_undetermined_past_its_local_time(hand_path):
    ladder = build_ladder(hand_path, alpha=1.0)
    assert marginals_at(ladder, ladder.total_local_time + 1.0) is None
    assert marginals_at(ladder, 0.0) == (0.0, 0.0, 0)


def test_killed_ladder_is_known_forever():
    path = MarkedPath(drift=-1.0, horizon=10.0, times=[1.0], sizes=[2.0], marks=[0], seed=3,
                      stopped_at=3.5, stop_reason=STOP_KILLED)
    ladder = build_ladder(path, alpha=1.0)
    assert ladder.killed and ladder.known_until == np.inf
    assert marginals_at(ladder, 1e9) == (1.0, 1.0, 0)
    # killed before local time t: exp(-delta * inf) contributes 0
    exponent, fraction = ladder_exponent([ladder], 1.0, 1.0, local_time=1e9)
    assert (exponent, fraction) == (np.inf, 0.0)


def test_ladder_exponent_rejects_heavy_censoring(hand_path):
    ladder = build_ladder(hand_path, alpha=1.0)
    with pytest.raises(HorizonTooShortError):
        ladder_exponent([ladder], 1.0, 1.0, local_time=ladder.total_local_time + 1.0)


def test_first_mark_time(hand_path):
    ladder = build_ladder(hand_path, alpha=1.0)
    assert first_mark_time(ladder) == (ladder.local_times[0], False)
    unmarked = MarkedPath(drift=-1.0, horizon=5.0, times=[1.0], sizes=[3.0], marks=[0], seed=7)
    ladder = build_ladder(unmarked, alpha=1.0)
    assert first_mark_time(ladder) == (ladder.total_local_time, True)


def test_pooled_overshoots_are_exponential(critical_spec):
    # critical exponential jumps: every overshoot is Exp(1), undershoots have mean 1
    ladders = [build_ladder(sample_marked_path_until(critical_spec, MarkRule.constant(0.5), 1e5, seed=s,
                                                     record_target=20), 1.0)
               for s in range(200)]
    under, over, marks = pool_records(ladders)
    assert over.size > 3000
    assert stats.kstest(over, "expon").pvalue > 1e-3
    assert np.mean(under) == pytest.approx(1.0, abs=0.1)
    assert np.mean(marks) == pytest.approx(0.5, abs=0.05)


def test_pool_records_empty():
    under, over, marks = pool_records([])
    assert under.size == over.size == marks.size == 0


def test_record_count_over_unit_local_time(critical_spec):
    # with mu_plus = alpha = 1 the records within local time 1 are Poisson(1)
    counts = []
    for s in range(400):
        path = sample_marked_path(critical_spec, NO_MARKS, 2e3, seed=1000 + s)
        ladder = build_ladder(path, alpha=1.0)
        if ladder.is_known(1.0):
            counts.append(int(np.searchsorted(ladder.local_times, 1.0, side="right")))
    assert len(counts) > 350
    assert np.mean(counts) == pytest.approx(1.0, abs=0.25)


def assert_ladder_reads_the_supremum(path, ladder, s):
    np.testing.assert_array_equal(ladder.h_plus(s), path.supremum(ladder.inverse_local_time(s)))


def local_time_grid(ladder, extra=()):
    end = ladder.total_local_time
    return np.unique(np.concatenate((np.linspace(0.0, end, 41)[:-1], ladder.local_times,
                                     np.nextafter(ladder.local_times, 0.0), np.asarray(extra, dtype=float))))


def test_ladder_height_is_supremum_at_inverse_local_time(critical_spec):
    checked = 0
    for seed in range(300):
        path = sample_marked_path(critical_spec, MarkRule.constant(0.5), 40.0, seed)
        ladder = build_ladder(path, alpha=1.0)
        s = local_time_grid(ladder)
        assert np.all(s < ladder.known_until)
        assert_ladder_reads_the_supremum(path, ladder, s)
        checked += ladder.local_times.size
    assert checked > 200


def test_killed_ladder_height_is_final_supremum(subcritical_spec):
    depth = kill_depth(subcritical_spec)
    killed = 0
    for seed in range(100):
        path = sample_marked_path_until(subcritical_spec, NO_MARKS, 400.0, seed, kill_depth=depth)
        ladder = build_ladder(path, alpha=2.0)
        total = ladder.total_local_time
        assert_ladder_reads_the_supremum(path, ladder, local_time_grid(ladder, extra=(total, 2.0 * total, 1e9)))
        killed += ladder.killed
    assert killed >= 95


def test_tied_maximum_is_not_a_ladder_jump():
    # the second jump returns the path exactly to its maximum
    path = MarkedPath(drift=-1.0, horizon=5.0, times=[1.0, 3.0], sizes=[2.0, 2.0], marks=[0, 1], seed=5)
    ladder = build_ladder(path, alpha=1.0)
    np.testing.assert_array_equal(ladder.levels, [1.0])
    assert_ladder_reads_the_supremum(path, ladder, local_time_grid(ladder))
