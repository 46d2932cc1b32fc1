"""Shared fixtures: the three reference processes and small tolerance tables."""
import numpy as np
import pytest

from fluct_core.constants import DEFAULT_TOLERANCES
from fluct_core.measures import exponential_measure
from fluct_core.specs import ProcessSpec


@pytest.fixture
def critical_spec():
    # psi(lam) = lam^2 / (1 + lam), W(x) = 1 + x
    return ProcessSpec(drift=-1.0, levy_measure=exponential_measure(1.0, 1.0))


@pytest.fixture
def subcritical_spec():
    # psi'(0+) = 1/2, W(x) = 2 - exp(-x / 2)
    return ProcessSpec(drift=-1.0, levy_measure=exponential_measure(0.5, 1.0))


@pytest.fixture
def supercritical_spec():
    # psi(lam) = lam (lam - 1) / (1 + lam), eta = 1
    return ProcessSpec(drift=-1.0, levy_measure=exponential_measure(2.0, 1.0))


@pytest.fixture
def small_sample_tolerances():
    return DEFAULT_TOLERANCES.with_overrides({"min_uncensored": 100})


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
