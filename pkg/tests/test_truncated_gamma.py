"""Lower-truncated gamma sampling: exactness and tail fallback."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gammaincc

from funfactor.truncated_gamma import sample_truncated_gamma


def test_untruncated_reduces_to_exponential(rng):
    draws = np.array([sample_truncated_gamma(1.0, 1.0, -np.inf, rng)
                      for _ in range(100_000)])
    se = draws.std() / np.sqrt(draws.size)
    assert abs(draws.mean() - 1.0) < 3 * se


def test_truncation_contract(rng):
    for shape, rate in ((0.7, 2.0), (1.0, 1.0), (3.5, 0.5)):
        draws = np.array([sample_truncated_gamma(shape, rate, 1.0, rng)
                          for _ in range(2000)])
        assert np.all(draws > 1.0)


def test_mean_against_quadrature_oracle(rng):
    shape, rate, lower = 2.0, 1.0, 1.0

    def density(x):
        return x ** (shape - 1.0) * np.exp(-rate * x)

    mass, _ = quad(density, lower, np.inf)
    mean_oracle = quad(lambda x: x * density(x), lower, np.inf)[0] / mass

    draws = np.array([sample_truncated_gamma(shape, rate, lower, rng)
                      for _ in range(100_000)])
    se = draws.std() / np.sqrt(draws.size)
    assert abs(draws.mean() - mean_oracle) < 3 * se


def test_rate_scaling(rng):
    # X ~ TruncGamma(a, r, L) iff r X ~ TruncGamma(a, 1, r L)
    draws = np.array([sample_truncated_gamma(2.0, 4.0, 1.0, rng)
                      for _ in range(50_000)])
    ref = np.array([sample_truncated_gamma(2.0, 1.0, 4.0, rng)
                    for _ in range(50_000)]) / 4.0
    se = np.hypot(draws.std() / np.sqrt(draws.size), ref.std() / np.sqrt(ref.size))
    assert abs(draws.mean() - ref.mean()) < 4 * se


def test_deep_tail_fallback(rng):
    lower = 800.0
    assert gammaincc(1.0, lower) < 1e-300
    diag = {}
    draws = np.array([sample_truncated_gamma(1.0, 1.0, lower, rng, diag)
                      for _ in range(4000)])
    assert diag["trunc_gamma_fallbacks"] == 4000
    assert np.all(draws > lower)
    assert np.all(np.isfinite(draws))
    # memoryless tail: excess over the boundary is Exp(1)
    excess = draws - lower
    se = excess.std() / np.sqrt(excess.size)
    assert abs(excess.mean() - 1.0) < 4 * se


def test_deep_tail_fallback_small_shape(rng):
    lower = 760.0
    diag = {}
    draws = np.array([sample_truncated_gamma(0.5, 1.0, lower, rng, diag)
                      for _ in range(1000)])
    assert diag["trunc_gamma_fallbacks"] == 1000
    assert np.all(draws > lower)


def test_determinism():
    a = np.random.Generator(np.random.Philox(123))
    b = np.random.Generator(np.random.Philox(123))
    xs = [sample_truncated_gamma(2.0, 1.5, 1.0, a) for _ in range(50)]
    ys = [sample_truncated_gamma(2.0, 1.5, 1.0, b) for _ in range(50)]
    assert xs == ys


def test_argument_errors(rng):
    with pytest.raises(ValueError):
        sample_truncated_gamma(0.0, 1.0, 1.0, rng)
    with pytest.raises(ValueError):
        sample_truncated_gamma(1.0, -2.0, 1.0, rng)
