import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from tempmux.stats import (TRUNCATION, Interval, MeanPairNumber, ThermalDistribution, bernoulli_positions,
                           click_prob, heralded_single_prob, multi_pair_prob, output_prob,
                           sample_pair_count, thermal_cdf, thermal_pmf, thin)


def test_pmf_matches_geometric_law():
    mu = 0.3
    n = np.arange(6)
    assert np.allclose(thermal_pmf(mu, n), mu ** n / (1 + mu) ** (n + 1), rtol=1e-14)


@pytest.mark.parametrize("mu", [0.0, 1e-3, 0.1, 0.5, 1.0])
def test_pmf_normalization_at_truncation(mu):
    n = np.arange(TRUNCATION + 1)
    tail = (mu / (1 + mu)) ** (TRUNCATION + 1)
    assert abs(thermal_pmf(mu, n).sum() + tail - 1.0) <= 1e-12


def test_pmf_zero_mu_is_vacuum():
    assert thermal_pmf(0.0, 0) == 1.0
    assert thermal_pmf(0.0, 3) == 0.0


def test_negative_mu_rejected():
    with pytest.raises(ValueError):
        thermal_pmf(-0.1, 0)
    with pytest.raises(ValueError):
        MeanPairNumber(-1.0)


def test_cdf_consistent_with_pmf():
    mu = 0.7
    assert thermal_cdf(mu, 4) == pytest.approx(thermal_pmf(mu, np.arange(5)).sum(), rel=1e-13)


def test_interval_conversion():
    m = MeanPairNumber(0.05)
    f = m.per_frame()
    assert f.interval is Interval.PER_FRAME and f.mu == pytest.approx(0.2)
    assert f.per_pulse().mu == pytest.approx(0.05)
    assert MeanPairNumber(0.3, "per_frame").per_frame(8).mu == 0.3


def test_heralded_single_closed_forms():
    assert heralded_single_prob(1.0) == 0.25
    assert heralded_single_prob(0.0) == 0.0
    mu = 0.2
    p0 = 1 / (1 + mu)
    assert heralded_single_prob(mu) + multi_pair_prob(mu) + p0 == pytest.approx(1.0, abs=1e-15)
    assert output_prob(mu, 0.5) == pytest.approx(0.5 * mu / (1 + mu) ** 2)


@given(st.floats(min_value=0.0, max_value=50.0))
def test_heralded_single_never_exceeds_peak(mu):
    assert heralded_single_prob(mu) <= 0.25 + 1e-15


def test_click_prob_series():
    # E[(1 - eta)^n] over the thermal law, summed directly
    mu, eta, d = 0.4, 0.3, 1e-3
    n = np.arange(200)
    direct = 1 - (1 - d) * np.sum(thermal_pmf(mu, n) * (1 - eta) ** n)
    assert click_prob(mu, eta, d) == pytest.approx(direct, rel=1e-12)


def test_sampler_distribution():
    rng = np.random.default_rng(3)
    mu = 0.5
    x = sample_pair_count(mu, rng, 200_000)
    counts = np.bincount(x, minlength=8)[:8]
    expected = thermal_pmf(mu, np.arange(8)) * x.size
    expected[-1] += (1 - thermal_cdf(mu, 7)) * x.size
    counts[-1] += (x >= 8).sum()
    _, p = sps.chisquare(counts, expected)
    assert p > 0.01


def test_thinned_thermal_is_thermal():
    # binomial loss of a thermal mode gives a thermal mode of mean eta * mu
    rng = np.random.default_rng(11)
    mu, eta = 0.8, 0.35
    y = thin(sample_pair_count(mu, rng, 300_000), eta, rng)
    k = 6
    counts = np.bincount(np.minimum(y, k), minlength=k + 1)
    expected = np.append(thermal_pmf(mu * eta, np.arange(k)), 1 - thermal_cdf(mu * eta, k - 1)) * y.size
    _, p = sps.chisquare(counts, expected)
    assert p > 0.01


def test_thermal_distribution_wrapper():
    d = ThermalDistribution(0.1)
    assert d.pmf(0) == pytest.approx(1 / 1.1)
    assert d.cdf(0) == pytest.approx(1 / 1.1)
    assert d.sample(np.random.default_rng(0), 3).shape == (3,)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=1e-4, max_value=0.5), st.integers(min_value=1, max_value=20_000),
       st.integers(min_value=0, max_value=2 ** 31))
def test_bernoulli_positions_valid(p, n, seed):
    pos = bernoulli_positions(p, n, np.random.default_rng(seed))
    assert np.all(np.diff(pos) > 0)
    assert pos.size == 0 or (pos[0] >= 0 and pos[-1] < n)


def test_bernoulli_positions_rate():
    n, p = 10_000_000, 1e-5
    k = bernoulli_positions(p, n, np.random.default_rng(1)).size
    assert abs(k - n * p) <= 3 * math.sqrt(n * p)


def test_bernoulli_positions_edges():
    rng = np.random.default_rng(0)
    assert bernoulli_positions(0.0, 10, rng).size == 0
    assert np.array_equal(bernoulli_positions(1.0, 4, rng), np.arange(4))
