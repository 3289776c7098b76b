import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from blfrb.exceptions import InsufficientReplicasError
from blfrb.inference import (UncertaintySummary, aggregate, asymptotic_sd, ci_and_test,
                             consistency_diagnostic, quantile_estimate, relative_error,
                             sd_estimate, summarize)

clouds = arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 4)),
                elements=st.floats(-1e3, 1e3, allow_nan=False))


def two_pass_sd(x):
    n = len(x)
    mean = sum(x) / n
    return math.sqrt(sum((v - mean) ** 2 for v in x) / (n - 1))


def test_sd_hand_values():
    assert sd_estimate([0.0, 0.0, 0.0]) == 0.0
    assert sd_estimate([1.0, 3.0]) == pytest.approx(math.sqrt(2), rel=1e-15)


def test_sd_matches_two_pass_oracle():
    cloud = np.random.default_rng(4).normal(3.0, 2.0, size=(500, 3))
    sd = sd_estimate(cloud)
    for j in range(3):
        assert sd[j] == pytest.approx(two_pass_sd(list(cloud[:, j])), rel=1e-12)
        assert sd_estimate(cloud, coordinate=j) == sd[j]


def test_sd_needs_two_replicas():
    with pytest.raises(InsufficientReplicasError):
        sd_estimate([1.0])


def test_quantile_upper_convention():
    cloud = np.arange(1.0, 101.0)
    assert quantile_estimate(cloud, 0.5) == 50.0
    assert quantile_estimate(cloud, 0.95) == 5.0
    assert quantile_estimate(cloud, 0.05) == 95.0
    assert quantile_estimate(cloud, 1e-9) == 100.0
    assert quantile_estimate(cloud, 1 - 1e-9) == 1.0


def test_quantile_of_large_gaussian_cloud():
    cloud = np.random.default_rng(7).normal(2.0, 0.5, size=200_000)
    # order statistic SE near the 2.5% tail is about 0.004 here
    assert quantile_estimate(cloud, 0.025) == pytest.approx(2.0 + 1.959964 * 0.5, abs=0.015)


@pytest.mark.parametrize("t", [0.0, 1.0, -0.1])
def test_quantile_rejects_t_outside_unit_interval(t):
    with pytest.raises(ValueError):
        quantile_estimate([1.0, 2.0], t)


def _summary(lower, upper):
    lower, upper = np.atleast_1d(lower).astype(float), np.atleast_1d(upper).astype(float)
    return UncertaintySummary(sd=np.ones_like(lower), quantiles={0.975: lower, 0.025: upper},
                              ci_lower=lower, ci_upper=upper, alpha=0.05, r_used=10)


def test_ci_test_decisions():
    assert not ci_and_test(_summary(-0.1, 0.2))[0]
    assert ci_and_test(_summary(0.05, 0.2))[0]
    assert ci_and_test(_summary(-0.3, -0.01))[0]


def test_summary_ci_is_ordered_and_uses_both_tails():
    cloud = np.random.default_rng(1).normal(size=(1000, 3))
    s = summarize(cloud, alpha=0.1)
    assert np.all(s.ci_lower <= s.ci_upper)
    assert np.array_equal(s.ci_lower, quantile_estimate(cloud, 0.95))
    assert np.array_equal(s.ci_upper, quantile_estimate(cloud, 0.05))
    assert s.r_used == 1000


def test_ci_at_other_stored_alpha():
    cloud = np.random.default_rng(2).normal(1.0, 0.1, size=(400, 2))
    s = summarize(cloud, alpha=0.05, upper_probs=(0.995, 0.005))
    assert np.all(ci_and_test(s, alpha=0.01))
    with pytest.raises(ValueError):
        ci_and_test(s, alpha=0.2)


def test_relative_error_reference_value():
    assert asymptotic_sd(math.sqrt(0.1), 50000, 0.95) == pytest.approx(1.4509525002200233e-3,
                                                                       rel=1e-14)
    ref = asymptotic_sd(math.sqrt(0.1), 50000, 0.95)
    assert relative_error(np.full(50, ref), math.sqrt(0.1), 50000, 0.95) == pytest.approx(0, abs=1e-15)


def test_relative_error_efficiency_algebra():
    sd_hat = np.full(5, 2e-3)
    e_mm = relative_error(sd_hat, 0.3, 10000, 0.95)
    e_ls = relative_error(sd_hat, 0.3, 10000, 1.0)
    ratio = 2e-3 / (0.3 / 100)
    assert e_mm == pytest.approx(abs(ratio * math.sqrt(0.95) - 1), rel=1e-12)
    assert e_ls == pytest.approx(abs(ratio - 1), rel=1e-12)


def test_aggregate_is_mean_of_bag_summaries():
    rng = np.random.default_rng(3)
    bags = [summarize(rng.normal(size=(50, 4)), center=rng.normal(size=4)) for _ in range(5)]
    agg = aggregate(bags)
    assert np.allclose(agg.sd, np.mean([b.sd for b in bags], axis=0), rtol=0, atol=1e-15)
    for t in agg.quantiles:
        assert np.allclose(agg.quantiles[t], np.mean([b.quantiles[t] for b in bags], axis=0),
                           rtol=0, atol=1e-15)
    assert np.allclose(agg.center, np.mean([b.center for b in bags], axis=0))


def test_summary_round_trip():
    s = summarize(np.random.default_rng(0).normal(size=(30, 2)), center=[0.1, 0.2])
    assert UncertaintySummary.from_dict(s.to_dict()) == s


def test_consistency_null_calibration():
    rng = np.random.default_rng(11)
    n, sigma0, eff = 10000, 0.5, 0.95
    target_sd = sigma0 / math.sqrt(eff) / math.sqrt(n)
    k = 400
    cloud = rng.normal(0.0, target_sd, size=(1000, k))
    rep = consistency_diagnostic(cloud, np.zeros(k), n, sigma0, eff)
    # rejection rate at the 1% level, allowing three binomial standard errors
    rejected = np.mean(rep.ks_statistic >= rep.critical_value(0.01))
    assert rejected <= 0.01 + 3 * math.sqrt(0.01 * 0.99 / k)
    assert np.mean(rep.passes(0.01)) >= 0.99 - 3 * math.sqrt(0.01 * 0.99 / k)
    assert rep.average_ks < rep.critical_value(0.01)


def test_consistency_power_against_shift():
    rng = np.random.default_rng(12)
    n, sigma0, eff = 10000, 0.5, 0.95
    target_sd = sigma0 / math.sqrt(eff) / math.sqrt(n)
    cloud = rng.normal(0.5 * target_sd, target_sd, size=(1000, 5))
    rep = consistency_diagnostic(cloud, np.zeros(5), n, sigma0, eff)
    assert not np.any(rep.passes(0.01))
    assert rep.ks_statistic[rep.worst] >= rep.ks_statistic[rep.best]


@settings(max_examples=100, deadline=None)
@given(cloud=clouds, shift=st.floats(-100, 100), scale=st.floats(-10, 10))
def test_sd_translation_invariant_and_homogeneous(cloud, shift, scale):
    base = sd_estimate(cloud)
    assert np.allclose(sd_estimate(cloud + shift), base, rtol=1e-7, atol=1e-9)
    assert np.allclose(sd_estimate(scale * cloud), abs(scale) * base, rtol=1e-9, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(cloud=clouds, t1=st.floats(0.01, 0.99), t2=st.floats(0.01, 0.99),
       a=st.floats(0.01, 10), b=st.floats(-100, 100))
def test_quantile_monotone_and_affine_equivariant(cloud, t1, t2, a, b):
    lo, hi = sorted((t1, t2))
    assert np.all(quantile_estimate(cloud, hi) <= quantile_estimate(cloud, lo))
    assert np.allclose(quantile_estimate(a * cloud + b, lo), a * quantile_estimate(cloud, lo) + b,
                       rtol=1e-12, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(sd=arrays(np.float64, 5, elements=st.floats(1e-4, 1.0)), k=st.floats(0.1, 10))
def test_relative_error_scale_free(sd, k):
    e1 = relative_error(sd, 0.3, 1000, 0.95)
    e2 = relative_error(k * sd, 0.3 * k, 1000, 0.95)
    assert e1 == pytest.approx(e2, rel=1e-9, abs=1e-12)
