import math

import numpy as np
import pytest
from scipy import stats

from fluct_core.constants import Assumption
from fluct_core.exceptions import SpecValidationError, UnsupportedFamilyError
from fluct_core.levy_calculus import LimitSpec, ladder_measure, limit_parameters
from fluct_core.measures import exponential_measure
from fluct_core.presets import get_preset
from fluct_core.specs import MarkRule, NO_MARKS
from fluct_core.subordinator_sampler import (SubordinatorSpec, limit_subordinator, sample_marginals,
                                             sample_subordinator, subordinator_exponent)


@pytest.fixture
def b1_limit():
    return limit_subordinator(limit_parameters(get_preset("crit-exp-B1-theta2")))


def test_limit_subordinator_parameters(b1_limit):
    assert b1_limit.drift_plus == pytest.approx(1.0)
    assert b1_limit.independent_mark_rate == pytest.approx(2.0)
    assert b1_limit.kill == 0.0
    assert b1_limit.jump_mass == 0.0


def test_limit_with_jumps_is_unsupported():
    limit = LimitSpec(drift=0.0, b2=0.0, limit_measure=exponential_measure(), eta=0.0, theta=1.0,
                      kappa_slope=0.0, rho=0.0, kill=0.0, assumption=Assumption.B1)
    with pytest.raises(UnsupportedFamilyError):
        limit_subordinator(limit)


def test_negative_rates_rejected():
    with pytest.raises(SpecValidationError):
        SubordinatorSpec(kill=-1.0)


def test_marginals_of_b1_limit(b1_limit):
    h_plus, h_mark, alive = sample_marginals(b1_limit, 1.0, 20000, seed=17)
    np.testing.assert_allclose(h_plus, 1.0)
    assert np.all(alive)
    # H^M(1) ~ Poisson(theta)
    assert np.mean(h_mark) == pytest.approx(2.0, abs=0.05)
    assert np.var(h_mark) == pytest.approx(2.0, abs=0.1)


def test_killed_marginals_of_subcritical_limit():
    spec = limit_subordinator(limit_parameters(get_preset("subcritical-exponential")))
    h_plus, h_mark, alive = sample_marginals(spec, 1.0, 20000, seed=5)
    assert np.mean(alive) == pytest.approx(math.exp(-0.5), abs=0.015)
    np.testing.assert_array_equal(h_plus, 0.0)
    # E[exp(-gamma H^M(1)); alive] = exp(-exponent)
    gamma = 0.7
    empirical = np.mean(np.exp(-gamma * h_mark) * alive)
    assert empirical == pytest.approx(math.exp(-subordinator_exponent(spec, 0.0, gamma)), abs=0.015)


def test_jump_subordinator_laplace_transform(critical_spec):
    spec = SubordinatorSpec(jump_measure=ladder_measure(critical_spec, MarkRule.constant(0.5)))
    h_plus, h_mark, _ = sample_marginals(spec, 1.0, 20000, seed=8)
    # unit-rate Exp(1) jumps: E e^{-H+(1)} = exp(-1/2)
    assert np.mean(np.exp(-h_plus)) == pytest.approx(math.exp(-0.5), abs=0.01)
    assert subordinator_exponent(spec, 1.0, 0.0) == pytest.approx(0.5, rel=1e-6)
    assert np.mean(h_mark) == pytest.approx(0.5, abs=0.03)


def test_exponent_rejects_negative_arguments(b1_limit):
    with pytest.raises(SpecValidationError):
        subordinator_exponent(b1_limit, -1.0, 0.0)


def test_sampled_path_is_monotone_and_stopped(critical_spec):
    spec = SubordinatorSpec(drift_plus=0.5, jump_measure=ladder_measure(critical_spec, NO_MARKS),
                            independent_mark_rate=1.0, kill=0.2)
    path = sample_subordinator(spec, 50.0, seed=3)
    grid = np.linspace(0.0, 50.0, 501)
    assert np.all(np.diff(path.h_plus(grid)) >= 0)
    assert np.all(np.diff(path.h_mark(grid)) >= 0)
    if np.isfinite(path.kill_time) and path.kill_time < 50.0:
        assert np.all(path.times < path.kill_time)
        assert path.h_plus(50.0) == path.h_plus(path.kill_time)
        assert not path.alive(50.0)


def test_sampled_path_marks_are_poisson(b1_limit):
    counts = [int(sample_subordinator(b1_limit, 1.0, seed=s).h_mark(1.0)) for s in range(2000)]
    observed = np.bincount(counts, minlength=4)[:4]
    expected = 2000 * stats.poisson(2.0).pmf(np.arange(4))
    np.testing.assert_allclose(observed, expected, rtol=0.2)


def test_bad_horizon(b1_limit):
    with pytest.raises(SpecValidationError):
        sample_subordinator(b1_limit, 0.0, seed=1)
