import math

import numpy as np
import pytest

from fluct_core.constants import DEFAULT_TOLERANCES, Metric
from fluct_core.exceptions import PrecisionFailureError, SpecValidationError, UsageError
from fluct_core.convergence_lab import (DistanceReport, ExponentialLaw, PointMass, PoissonLaw, SampleSet,
                                        convergence_report, distribution_distance, empirical_laplace,
                                        exponential_rate_test, family_members, fixed_index_checks, index_context,
                                        js_condition_check, ladder_chi_square, limit_sampler_check, mean_test,
                                        merge_index_samples, merge_sample_sets, replicate_chunks, simulate_index,
                                        trend_verdicts, walk_identity_check)
from fluct_core.levy_calculus import ladder_measure, limit_parameters
from fluct_core.presets import get_preset
from fluct_core.specs import NO_MARKS


def sample(values, label="x", n=1, start=0, censored=None):
    values = np.asarray(values, dtype=float)
    return SampleSet(label, values, n, (start, start + values.shape[0]), censored)


# ------------------------------------------------------------------------------
# samples and reports
# ------------------------------------------------------------------------------

@pytest.mark.parametrize("values", [[], [1.0, np.nan], np.zeros((3, 3))])
def test_sample_set_validation(values):
    with pytest.raises(SpecValidationError):
        SampleSet("bad", values)


def test_merge_sample_sets_orders_by_replicate():
    parts = [sample([3.0, 4.0], start=2), sample([1.0, 2.0], start=0)]
    merged = merge_sample_sets(parts)
    np.testing.assert_array_equal(merged.values, [1.0, 2.0, 3.0, 4.0])
    assert merged.seed_range == (0, 4)
    with pytest.raises(UsageError):
        merge_sample_sets([sample([1.0], n=1), sample([2.0], n=2, start=1)])


def test_distance_report_restores_from_dict():
    report = DistanceReport(Metric.KS, "overshoot", 16, 0.01, 0.05, (1000,), (("mle", 1.5),))
    restored = DistanceReport.from_dict(report.as_dict())
    assert restored == report
    assert restored.passed


# ------------------------------------------------------------------------------
# comparators
# ------------------------------------------------------------------------------

def test_ks_against_exponential_law(rng):
    values = sample(rng.exponential(1.0, 4000))
    assert distribution_distance(values, ExponentialLaw(1.0), Metric.KS).passed
    assert not distribution_distance(values, ExponentialLaw(2.0), "KS").passed
    other = sample(rng.exponential(1.0, 4000), start=4000)
    assert distribution_distance(values, other, Metric.KS).passed


def test_tv_on_integers(rng):
    counts = sample(rng.poisson(2.0, 5000))
    report = distribution_distance(counts, PoissonLaw(2.0), Metric.TV_INTEGERS)
    assert report.passed and report.threshold == 0.05
    assert not distribution_distance(counts, PoissonLaw(4.0), Metric.TV_INTEGERS).passed
    # all mass at 0 against Poisson(0) is an exact match
    assert distribution_distance(sample(np.zeros(10)), PoissonLaw(0.0), Metric.TV_INTEGERS).value == 0.0


def test_wasserstein_to_point_mass():
    report = distribution_distance(sample([1.0, 2.0, 3.0]), PointMass(2.0), Metric.WASSERSTEIN_1)
    assert report.value == pytest.approx(2.0 / 3.0)
    assert report.threshold == np.inf
    assert report.informational and report.as_dict()["informational"]
    assert not distribution_distance(sample([1.0, 2.0, 3.0]), PoissonLaw(2.0), Metric.TV_INTEGERS).informational


def test_laplace_gap(rng):
    values = sample(rng.exponential(1.0, 5000))
    assert distribution_distance(values, ExponentialLaw(1.0), Metric.LAPLACE_GAP).passed
    assert not distribution_distance(values, ExponentialLaw(3.0), Metric.LAPLACE_GAP).passed


@pytest.mark.parametrize("metric, law", [(Metric.KS, PoissonLaw(1.0)), (Metric.TV_INTEGERS, ExponentialLaw(1.0)),
                                         (Metric.WASSERSTEIN_1, ExponentialLaw(1.0)),
                                         (Metric.CHI_SQUARE, ExponentialLaw(1.0))])
def test_metric_law_mismatch(metric, law):
    with pytest.raises(UsageError):
        distribution_distance(sample([0.0, 1.0, 2.0]), law, metric)


def test_tv_rejects_non_integers():
    with pytest.raises(UsageError):
        distribution_distance(sample([0.5, 1.0]), PoissonLaw(1.0), Metric.TV_INTEGERS)


def test_empirical_laplace_bootstrap_is_reproducible(rng):
    values = sample(rng.exponential(1.0, 500))
    first = empirical_laplace(values, 1.0)
    assert first == empirical_laplace(values, 1.0)
    assert first[0] == pytest.approx(0.5, abs=0.05)
    assert 0 < first[1] < 0.05
    assert empirical_laplace(sample(np.zeros(5)), 1.0) == (1.0, 0.0)


def test_exponential_rate_with_censoring(rng, small_sample_tolerances):
    raw = rng.exponential(1.0 / 2.0, 3000)
    cap = 0.8
    censored = raw > cap
    values = sample(np.minimum(raw, cap), censored=censored)
    report = exponential_rate_test(values, 2.0, cap=cap, tolerances=small_sample_tolerances)
    assert report.passed
    assert dict(report.detail)["mle"] == pytest.approx(2.0, rel=0.1)
    assert not exponential_rate_test(values, 3.0, cap=cap, tolerances=small_sample_tolerances).passed


def test_exponential_rate_needs_enough_uncensored(rng):
    values = sample(rng.exponential(1.0, 50))
    with pytest.raises(PrecisionFailureError):
        exponential_rate_test(values, 1.0)


def test_mean_test(rng):
    values = sample(rng.normal(1.0, 1.0, 2000))
    assert mean_test(values, 1.0).passed
    assert not mean_test(values, 1.5).passed
    assert mean_test(sample(np.ones(3)), 1.0).value == 0.0


def test_ladder_chi_square(critical_spec, rng):
    measure = ladder_measure(critical_spec, NO_MARKS)
    under, over, _ = measure.sample(rng, 5000)
    report = ladder_chi_square(under, over, measure)
    assert report.metric is Metric.CHI_SQUARE
    assert report.passed
    # whole jump sizes in place of undershoots break the joint law
    assert not ladder_chi_square(over + under, over, measure).passed


def test_trend_verdicts():
    def report(label, n, value, threshold=np.inf):
        return DistanceReport(Metric.WASSERSTEIN_1, label, n, value, threshold)

    verdicts = {v.label: v for v in trend_verdicts([
        report("shrinking", 4, 0.3), report("shrinking", 64, 0.1),
        report("growing", 4, 0.1), report("growing", 64, 0.3),
        report("zero", 4, 0.0), report("zero", 64, 0.0),
        report("settled", 4, 0.02, 0.05), report("settled", 64, 0.03, 0.05),
    ])}
    assert verdicts["shrinking"].passed
    assert not verdicts["growing"].passed
    assert verdicts["zero"].passed
    assert verdicts["settled"].passed
    assert (verdicts["growing"].first_n, verdicts["growing"].last_n) == (4, 64)


def test_replicate_chunks():
    assert replicate_chunks(600, 250) == [(0, 250), (250, 250), (500, 100)]
    assert replicate_chunks(0) == []


# ------------------------------------------------------------------------------
# characteristics of the rescaled families
# ------------------------------------------------------------------------------

def test_conditions_of_critical_family():
    preset = get_preset("crit-exp-B1-theta2")
    report = js_condition_check(family_members(preset.family, [4, 16]), limit_parameters(preset))
    rows = {(r.condition, r.n): r for r in report.rows}
    # c_n = n e^{-n}, W_n(x) = x + 1/n, phi_n(1) = (1 + sqrt(1 + 4 n^2)) / (2 n)
    assert rows[("drift-c", 4)].value == pytest.approx(4.0 * math.exp(-4.0), rel=1e-6)
    assert rows[("scale-gap", 4)].gap == pytest.approx(0.25, abs=1e-3)
    assert rows[("scale-gap", 16)].gap == pytest.approx(1.0 / 16.0, abs=1e-3)
    assert rows[("phi-gap", 16)].value == pytest.approx((1.0 + math.sqrt(1.0 + 4.0 * 256)) / 32.0, rel=1e-8)
    assert ("ladder-mass-ratio", 4) in rows
    assert report.passed
    assert {t.condition for t in report.trends} >= {"drift-c", "second-moment", "tail-g1", "tail-g2", "phi-gap",
                                                    "scale-gap"}


def test_conditions_of_drift_only_family():
    preset = get_preset("drift-only")
    report = js_condition_check(family_members(preset.family, [2, 4]), limit_parameters(preset))
    assert all(row.gap == pytest.approx(0.0, abs=1e-9) for row in report.rows)
    assert report.passed


def test_conditions_need_members():
    preset = get_preset("drift-only")
    with pytest.raises(UsageError):
        js_condition_check([], limit_parameters(preset))


# ------------------------------------------------------------------------------
# per-index experiment
# ------------------------------------------------------------------------------

def test_index_context_of_subcritical_preset():
    ctx = index_context(get_preset("subcritical-exponential"), 4, 400.0, 1.0, 7)
    assert ctx.measure.kill_rate == pytest.approx(0.5)
    assert ctx.stop_local_time == pytest.approx(8.0)
    assert np.isfinite(ctx.kill_depth)
    assert ctx.horizon_unscaled == pytest.approx(1600.0)


def test_simulation_is_independent_of_chunking():
    ctx = index_context(get_preset("crit-exp-B1-theta2"), 4, 400.0, 1.0, 20240601)
    whole = simulate_index(ctx, 0, 12)
    merged = merge_index_samples([simulate_index(ctx, 6, 6), simulate_index(ctx, 0, 6)])
    np.testing.assert_array_equal(whole.indices, merged.indices)
    np.testing.assert_array_equal(whole.h_mark, merged.h_mark)
    np.testing.assert_array_equal(whole.overshoots, merged.overshoots)
    np.testing.assert_array_equal(whole.total_local, merged.total_local)
    assert whole.events == merged.events


def test_drift_only_index_checks(small_sample_tolerances):
    ctx = index_context(get_preset("drift-only"), 2, 400.0, 1.0, 99, small_sample_tolerances)
    samples = simulate_index(ctx, 0, 1500)
    assert samples.events == 0
    assert not samples.horizon_censored.any()
    reports = {r.label: r for r in fixed_index_checks(ctx, samples, small_sample_tolerances)}
    # L(inf) = tau_0 ~ Exp(1) and kappa(1, 0) = phi(1) = 1
    assert reports["L(inf)"].passed
    assert reports["kappa*phi ladder"].passed
    assert dict(reports["kappa*phi ladder"].detail)["phi"] == pytest.approx(1.0)


def test_drift_only_convergence_report(small_sample_tolerances):
    report = convergence_report(get_preset("drift-only"), [2, 4], 600, seed_base=5,
                                tolerances=small_sample_tolerances, chunk=200)
    assert report.n_grid == (2, 4)
    assert [row.replicates for row in report.rows] == [600, 600]
    assert report.passed
    assert {t.label for t in report.trends} == {"H_mark(1)", "H_plus(1)"}


def test_drift_only_walk_identity():
    ctx = index_context(get_preset("drift-only"), 2, 400.0, 1.0, 3)
    report, fristedt = walk_identity_check(ctx, 2000, walk_steps=8)
    assert report.passed
    # the walk never goes positive, so every Fristedt term vanishes
    assert fristedt.alpha == 1.0
    assert fristedt.standard_error == 0.0


def test_limit_sampler_check():
    for preset_id in ("crit-exp-B1-theta2", "crit-exp-B2", "subcritical-exponential"):
        report = limit_sampler_check(limit_parameters(get_preset(preset_id)), 20000, seed=11)
        assert report.passed, preset_id
        assert report.n_index == 0


@pytest.mark.slow
def test_critical_index_checks_pass(small_sample_tolerances):
    preset = get_preset("crit-exp-B1-theta2")
    ctx = index_context(preset, 4, 400.0, 1.0, 20240601, small_sample_tolerances)
    samples = simulate_index(ctx, 0, 1500)
    reports = fixed_index_checks(ctx, samples, small_sample_tolerances)
    assert {r.label for r in reports} >= {"e_n", "overshoot", "undershoot", "kappa*phi ladder"}
    assert all(r.passed for r in reports), [r.as_dict() for r in reports if not r.passed]


def by_index_and_label(report):
    return {(r.n_index, r.label): r for r in report.reports}


@pytest.mark.slow
def test_b2_family_ladder_height_mean_is_one(small_sample_tolerances):
    # t * integral z^2 / 2 Lambda_n(dz) = 1 for every n under d_n = n^2
    report = convergence_report(get_preset("crit-exp-B2"), [4, 16], 1000, seed_base=20240601,
                                tolerances=small_sample_tolerances)
    rows = by_index_and_label(report)
    for n in (4, 16):
        mean_row = rows[(n, "H_plus(1) mean")]
        assert mean_row.passed, mean_row.as_dict()
        assert dict(mean_row.detail)["expected"] == pytest.approx(1.0, rel=1e-8)
        assert rows[(n, "H_plus(1)")].informational
    trends = {t.label: t for t in report.trends}
    assert trends["H_plus(1)"].passed
    assert trends["H_plus(1)"].last_value < trends["H_plus(1)"].first_value


@pytest.mark.slow
def test_subcritical_family_local_time_is_exponential(small_sample_tolerances):
    report = convergence_report(get_preset("subcritical-exponential"), [4, 16], 1000, seed_base=20240601,
                                tolerances=small_sample_tolerances)
    rows = by_index_and_label(report)
    for n, row in zip((4, 16), report.rows):
        assert row.n == n
        # observed up to local time 8: P(killed) = 1 - e^{-4}
        assert row.killed > 0.95
        total = rows[(n, "L(inf)")]
        assert total.passed, total.as_dict()
        assert dict(total.detail)["rate"] == pytest.approx(0.5)
        assert dict(total.detail)["cap"] == pytest.approx(8.0)


@pytest.mark.slow
def test_b1_family_fixed_checks_and_trends(small_sample_tolerances):
    report = convergence_report(get_preset("crit-exp-B1-theta2"), [4, 16], 1000, seed_base=7,
                                tolerances=small_sample_tolerances)
    rows = by_index_and_label(report)
    for n in (4, 16):
        assert rows[(n, "e_n")].passed, rows[(n, "e_n")].as_dict()
        assert rows[(n, "kappa*phi ladder")].passed, rows[(n, "kappa*phi ladder")].as_dict()
    assert {t.label for t in report.trends} == {"H_mark(1)", "H_plus(1)"}
    assert {t.label: t for t in report.trends}["H_plus(1)"].passed


@pytest.mark.slow
def test_critical_walk_weight_grows_with_steps():
    preset = get_preset("crit-exp-B1-theta2")
    estimates = {}
    for n in (4, 16):
        ctx = index_context(preset, n, 400.0, 1.0, 20240601)
        report, estimates[n] = walk_identity_check(ctx, 400, walk_steps=4 * n)
        assert report.passed, report.as_dict()
        assert report.label == "kappa*phi walk"
    # alpha grows like the square root of the steps per unit time
    assert estimates[16].alpha > 1.5 * estimates[4].alpha
    assert all(e.tail_bound < DEFAULT_TOLERANCES.fristedt_tail for e in estimates.values())
