import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bnbpfa.errors import DomainError
from bnbpfa.special_math import (
    P_MAX,
    P_MIN,
    RngStream,
    beta_function,
    digamma,
    log_gamma,
    nb_logpmf,
    sample_beta,
    sample_dirichlet,
    sample_gamma,
    sample_multinomial,
    sample_negative_binomial,
    sample_poisson,
    trigamma,
)

mp.mp.dps = 40


# -- deterministic functions -------------------------------------------------

@pytest.mark.parametrize("x, expected", [(1.0, 0.0), (2.0, 0.0), (0.5, 0.5723649429247001)])
def test_log_gamma_examples(x, expected):
    assert log_gamma(x) == pytest.approx(expected, abs=1e-12)


def test_log_gamma_against_mpmath():
    for x in np.geomspace(1e-6, 1e6, 300):
        ref = float(mp.loggamma(mp.mpf(float(x))))
        assert abs(log_gamma(x) - ref) <= 1e-12 * max(1.0, abs(ref))


@pytest.mark.parametrize(
    "x, expected",
    [
        (1.0, float(-mp.euler)),
        (2.0, float(1 - mp.euler)),
        (0.5, float(-mp.euler - 2 * mp.log(2))),
    ],
)
def test_digamma_examples(x, expected):
    assert digamma(x) == pytest.approx(expected, rel=1e-12)
    assert round(expected, 10) == {1.0: -0.5772156649, 2.0: 0.4227843351, 0.5: -1.9635100260}[x]


def test_digamma_against_mpmath():
    xs = np.geomspace(1e-4, 1e6, 500)
    got = digamma(xs)
    for x, g in zip(xs, got):
        ref = float(mp.digamma(mp.mpf(float(x))))
        # relative error, with an absolute floor near the root at x ~ 1.4616
        assert abs(g - ref) <= 1e-10 * max(abs(ref), 1e-2)


@pytest.mark.parametrize(
    "x, expected",
    [(1.0, float(mp.pi**2 / 6)), (0.5, float(mp.pi**2 / 2)), (2.0, float(mp.pi**2 / 6 - 1))],
)
def test_trigamma_examples(x, expected):
    assert trigamma(x) == pytest.approx(expected, rel=1e-12)


def test_trigamma_against_mpmath_and_monotone():
    xs = np.geomspace(1e-4, 1e6, 500)
    got = trigamma(xs)
    for x, g in zip(xs[::7], got[::7]):
        ref = float(mp.polygamma(1, mp.mpf(float(x))))
        assert g == pytest.approx(ref, rel=1e-10)
    assert np.all(np.diff(got) < 0)


def test_recurrences():
    xs = np.linspace(0.01, 100, 2001)
    assert np.allclose(log_gamma(xs + 1) - log_gamma(xs), np.log(xs), rtol=0, atol=1e-10)
    assert np.allclose(digamma(xs + 1) - digamma(xs), 1 / xs, rtol=0, atol=1e-9)


@pytest.mark.parametrize(
    "a, b, expected",
    [(1.0, 1.0, 1.0), (2.0, 3.0, 1 / 12), (0.0025, 0.9975, math.pi / math.sin(math.pi / 400))],
)
def test_beta_function_examples(a, b, expected):
    assert beta_function(a, b) == pytest.approx(expected, rel=1e-12)
    assert beta_function(b, a) == pytest.approx(expected, rel=1e-12)


def test_beta_function_value_400():
    assert round(beta_function(0.0025, 0.9975), 4) == 400.0041


@given(st.floats(1e-3, 50), st.floats(1e-3, 50))
def test_beta_function_is_exp_log_gamma(a, b):
    direct = math.exp(log_gamma(a) + log_gamma(b) - log_gamma(a + b))
    assert beta_function(a, b) == pytest.approx(direct, rel=1e-12)
    assert beta_function(a, b) == pytest.approx(beta_function(b, a), rel=1e-12)


@pytest.mark.parametrize("fn", [log_gamma, digamma, trigamma])
@pytest.mark.parametrize("x", [0.0, -1.0, float("nan")])
def test_domain_errors(fn, x):
    with pytest.raises(DomainError):
        fn(x)


def test_beta_function_domain():
    with pytest.raises(DomainError):
        beta_function(0.0, 1.0)


# -- rng streams --------------------------------------------------------------

def test_rng_stream_reproducible():
    a = RngStream(42).generator.random(5)
    b = RngStream(42).generator.random(5)
    assert np.array_equal(a, b)


def test_substreams_independent_of_parent_usage():
    parent = RngStream(7)
    first = parent.substream("theta", 3).generator.random(4)
    parent.generator.random(100)
    again = parent.substream("theta", 3).generator.random(4)
    assert np.array_equal(first, again)
    other = parent.substream("theta", 4).generator.random(4)
    assert not np.array_equal(first, other)


def test_substreams_uncorrelated():
    root = RngStream(1)
    u = root.substream("a").generator.random(50_000)
    v = root.substream("b").generator.random(50_000)
    assert abs(np.corrcoef(u, v)[0, 1]) < 4 / math.sqrt(50_000)


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_seed_range(seed):
    with pytest.raises(DomainError):
        RngStream(seed)


@pytest.mark.parametrize(
    "draw",
    [
        lambda r: sample_gamma(0.3, 2.0, r, size=20),
        lambda r: sample_beta(0.5, 2.0, r, size=20),
        lambda r: sample_dirichlet([0.1, 1.0, 3.0], r),
        lambda r: sample_multinomial(50, [0.2, 0.3, 0.5], r),
        lambda r: sample_poisson(3.0, r, size=20),
        lambda r: sample_negative_binomial(1.5, 0.4, r, size=20),
    ],
)
def test_samplers_deterministic(draw):
    assert np.array_equal(draw(RngStream(99)), draw(RngStream(99)))


# -- samplers -----------------------------------------------------------------

def test_gamma_large_shape_concentrates():
    x = sample_gamma(1e6, 1.0, RngStream(1), size=10_000)
    assert abs(x.mean() - 1e6) <= 3 * math.sqrt(1e6 / 1e4)


def test_gamma_exponential_mean():
    x = sample_gamma(1.0, 2.0, RngStream(2), size=100_000)
    assert x.mean() == pytest.approx(2.0, abs=0.02)


def test_gamma_small_shape_variance():
    x = sample_gamma(0.1, 1.0, RngStream(3), size=100_000)
    assert x.var() == pytest.approx(0.1, abs=0.01)
    assert np.all(x > 0)


def test_gamma_small_shape_distribution():
    x = sample_gamma(0.05, 1.0, RngStream(4), size=20_000)
    assert stats.kstest(x, stats.gamma(0.05).cdf).pvalue > 0.01


def test_beta_means_and_variance():
    rng = RngStream(5)
    assert sample_beta(1, 1, rng, size=100_000).mean() == pytest.approx(0.5, abs=0.005)
    assert sample_beta(0.0025, 0.9975, rng, size=100_000).mean() == pytest.approx(0.0025, abs=0.001)
    assert sample_beta(5, 5, rng, size=100_000).var() == pytest.approx(25 / (100 * 11), abs=0.003)


def test_beta_clamped():
    x = sample_beta(0.001, 0.001, RngStream(6), size=10_000)
    assert x.min() >= P_MIN and x.max() <= P_MAX
    assert np.all(np.isfinite(np.log1p(-x)))


def test_dirichlet_means():
    rng = RngStream(7)
    draws = sample_dirichlet(np.tile([1.0, 1.0, 1.0], (100_000, 1)), rng)
    assert np.allclose(draws.mean(axis=0), 1 / 3, atol=0.005)
    draws = sample_dirichlet(np.tile([2.0, 1.0, 1.0], (100_000, 1)), rng)
    assert np.allclose(draws.mean(axis=0), [0.5, 0.25, 0.25], atol=0.005)


def test_dirichlet_tiny_concentration_stays_on_simplex():
    w = sample_dirichlet(np.full(3000, 0.01), RngStream(8))
    assert abs(w.sum() - 1) < 1e-12
    assert np.all(w > 0)


@pytest.mark.parametrize("alphas", [[10, 0], [], [1.0, -2.0]])
def test_dirichlet_invalid(alphas):
    with pytest.raises(DomainError):
        sample_dirichlet(alphas, RngStream(0))


def test_multinomial_examples():
    rng = RngStream(9)
    assert np.array_equal(sample_multinomial(0, [0.5, 0.5], rng), [0, 0])
    assert np.array_equal(sample_multinomial(100, [1.0, 0.0, 0.0], rng), [100, 0, 0])
    x = sample_multinomial(100_000, [0.3, 0.7], rng)
    assert x.sum() == 100_000
    assert abs(x[0] - 30_000) <= 450


@pytest.mark.parametrize("n, probs", [(-1, [1.0]), (3, [0.5, 0.6]), (3, [1.2, -0.2])])
def test_multinomial_invalid(n, probs):
    with pytest.raises(DomainError):
        sample_multinomial(n, probs, RngStream(0))


def test_poisson_moments():
    rng = RngStream(10)
    assert sample_poisson(0.0, rng) == 0
    x = sample_poisson(4.0, rng, size=100_000)
    assert x.mean() == pytest.approx(4.0, abs=0.02)
    assert x.var() == pytest.approx(4.0, abs=0.1)
    assert sample_poisson(1e9, rng) > 0
    with pytest.raises(DomainError):
        sample_poisson(-1.0, rng)


def test_negative_binomial_moments():
    rng = RngStream(11)
    x = sample_negative_binomial(1.0, 0.5, rng, size=100_000)
    assert x.mean() == pytest.approx(1.0, abs=0.02)
    y = sample_negative_binomial(0.5, 0.9, rng, size=100_000)
    assert y.var() / y.mean() == pytest.approx(10.0, abs=0.5)


def test_negative_binomial_pmf_zero():
    assert math.exp(nb_logpmf(0, 2.0, 0.5)) == pytest.approx(0.25, rel=1e-14)


def test_negative_binomial_pmf_total_variation():
    r, p = 2.5, 0.3
    x = sample_negative_binomial(r, p, RngStream(12), size=1_000_000)
    kmax = 60
    emp = np.bincount(np.minimum(x, kmax), minlength=kmax + 1) / x.size
    pmf = np.exp(nb_logpmf(np.arange(kmax + 1), r, p))
    pmf[-1] += 1 - pmf.sum()
    assert 0.5 * np.abs(emp - pmf).sum() < 5e-3


def test_negative_binomial_matches_scipy_parameterisation():
    k = np.arange(20)
    assert np.allclose(np.exp(nb_logpmf(k, 2.5, 0.3)), stats.nbinom.pmf(k, 2.5, 0.7), rtol=1e-12)


@pytest.mark.parametrize("r, p", [(0.0, 0.5), (1.0, 0.0), (1.0, 1.0)])
def test_negative_binomial_invalid(r, p):
    with pytest.raises(DomainError):
        sample_negative_binomial(r, p, RngStream(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63), st.floats(0.05, 20))
def test_gamma_positive_and_reproducible(seed, shape):
    a = sample_gamma(shape, 1.0, RngStream(seed), size=5)
    b = sample_gamma(shape, 1.0, RngStream(seed), size=5)
    assert np.array_equal(a, b) and np.all(a > 0)
