import math

import numpy as np
import pytest
from scipy import stats

from oracles import augmentation_identity_error

from ltn.errors import DomainError, NumericalError
from ltn.samplers import (
    B_EXACT,
    pg_mean,
    pg_var,
    rng_stream,
    sample_gamma,
    sample_inverse_gaussian,
    sample_matrix_normal_columns,
    sample_mvn,
    sample_mvn_batch,
    sample_pg,
    sample_pg1,
)


def test_streams_are_reproducible_and_distinct():
    a = rng_stream(7, 0).standard_normal(5)
    np.testing.assert_array_equal(a, rng_stream(7, 0).standard_normal(5))
    assert not np.array_equal(a, rng_stream(7, 1).standard_normal(5))
    assert not np.array_equal(a, rng_stream(8, 0).standard_normal(5))


def test_pg_zero_shape_is_exactly_zero(rng):
    out = sample_pg(np.zeros(100, dtype=int), rng.normal(size=100) * 5, rng)
    assert np.all(out == 0.0)
    assert sample_pg(0, 3.0, rng) == 0.0


@pytest.mark.parametrize("bad", [(-1, 0.0), (1.5, 0.0), (2, np.inf), (2, np.nan)])
def test_pg_domain_errors(bad, rng):
    with pytest.raises(DomainError):
        sample_pg(*bad, rng)


def test_pg1_mean_at_zero():
    x = sample_pg1(np.zeros(1_000_000), rng_stream(1))
    assert abs(x.mean() - 0.25) < 0.002
    assert x.min() > 0


def test_pg_large_shape_mean():
    x = sample_pg(np.full(100_000, 50), np.full(100_000, 2.0), rng_stream(2))
    assert x.mean() == pytest.approx(50 * np.tanh(1.0) / 4, rel=0.01)


@pytest.mark.parametrize("c", [0.0, 0.5, 2.0, 10.0])
def test_pg1_moments(c):
    n = 200_000
    x = sample_pg1(np.full(n, c), rng_stream(3))
    m, v = float(pg_mean(1, c)), float(pg_var(1, c))
    assert abs(x.mean() - m) < 4 * math.sqrt(v / n)
    assert x.var() == pytest.approx(v, rel=0.03)


def test_pg1_distribution_against_series_cdf():
    # P(PG(1,0) <= w) from the J* series: 1 - sum_n (-1)^n 4/(pi (2n+1)) exp(-(2n+1)^2 pi^2 w / 2)
    x = sample_pg1(np.zeros(50_000), rng_stream(4))

    def cdf(w):
        w = np.atleast_1d(w)
        n = np.arange(60)[:, None]
        k = 2 * n + 1
        terms = (-1.0) ** n * 4 / (np.pi * k) * np.exp(-(k**2) * np.pi**2 * w[None, :] / 2)
        out = np.where(w > 0.05, 1 - terms.sum(axis=0), 0.0)
        small = w <= 0.05
        if small.any():
            # dual series is accurate near zero
            ws = w[small]
            m = np.arange(60)[:, None]
            kk = 2 * m + 1
            dual = (-1.0) ** m * 2 * stats.norm.sf(kk / (2 * np.sqrt(ws[None, :])))
            out[small] = 2 * dual.sum(axis=0)
        return out

    assert stats.kstest(x, cdf).pvalue > 0.001


def test_pg_regime_boundary_is_continuous():
    n = 20_000
    for c in (0.0, 1.5):
        lo = sample_pg(np.full(n, B_EXACT), np.full(n, c), rng_stream(5))
        hi = sample_pg(np.full(n, B_EXACT + 1), np.full(n, c), rng_stream(6))
        se = math.sqrt(lo.var() / n + hi.var() / n)
        expected_gap = float(pg_mean(1, c))
        assert abs((hi.mean() - lo.mean()) - expected_gap) < 3 * se


def test_pg_moment_formulas_small_c_limits():
    assert pg_mean(3, 0.0) == pytest.approx(0.75)
    assert pg_var(3, 0.0) == pytest.approx(3 / 24)
    assert pg_mean(3, 1e-3) == pytest.approx(3 * np.tanh(5e-4) / 2e-3, rel=1e-9)
    assert pg_var(2, 1e-2) == pytest.approx(2 * (np.sinh(1e-2) - 1e-2) / (4e-6 * np.cosh(5e-3) ** 2), rel=1e-6)
    assert np.isfinite(pg_var(1, 1e4))


def test_pg_scalar_and_array_shapes(rng):
    assert isinstance(sample_pg(3, 1.0, rng), float)
    assert sample_pg(np.ones((2, 3), dtype=int), 0.5, rng).shape == (2, 3)


# -- augmentation identity ----------------------------------------------------

@pytest.mark.parametrize("b", [1, 2, 3, 4, 5])
def test_pg_augmentation_identity_by_quadrature(b):
    mass, worst = augmentation_identity_error(b)
    assert mass < 1e-7
    assert worst < 1e-6


# -- inverse Gaussian, gamma ------------------------------------------------


def test_inverse_gaussian_moments():
    x = sample_inverse_gaussian(np.full(1_000_000, 2.0), np.full(1_000_000, 1.0), rng_stream(7))
    assert x.mean() == pytest.approx(2.0, rel=0.01)
    y = sample_inverse_gaussian(np.full(400_000, 0.5), np.full(400_000, 3.0), rng_stream(8))
    assert y.var() == pytest.approx(0.5**3 / 3.0, rel=0.03)
    assert x.min() > 0 and y.min() > 0


def test_inverse_gaussian_matches_scipy():
    x = sample_inverse_gaussian(np.full(20_000, 1.5), np.full(20_000, 2.0), rng_stream(9))
    # scipy's invgauss(mu/lam, scale=lam) has mean mu and shape lam
    assert stats.kstest(x, stats.invgauss(1.5 / 2.0, scale=2.0).cdf).pvalue > 0.001


def test_inverse_gaussian_infinite_mean_and_errors(rng):
    x = sample_inverse_gaussian(np.full(10, np.inf), np.ones(10), rng)
    assert np.all(np.isfinite(x) & (x > 0))
    with pytest.raises(DomainError):
        sample_inverse_gaussian(-1.0, 1.0, rng)
    with pytest.raises(DomainError):
        sample_inverse_gaussian(1.0, 0.0, rng)
    a = sample_inverse_gaussian(np.ones(5), np.ones(5), rng_stream(3))
    np.testing.assert_array_equal(a, sample_inverse_gaussian(np.ones(5), np.ones(5), rng_stream(3)))


def test_gamma_rate_parameterization(rng):
    x = sample_gamma(3.0, 2.0, rng, size=200_000)
    assert x.mean() == pytest.approx(1.5, rel=0.01)
    with pytest.raises(DomainError):
        sample_gamma(0.0, 1.0, rng)


# -- multivariate normals -----------------------------------------------------


def test_mvn_identity_precision():
    g = rng_stream(10)
    x = np.array([sample_mvn(np.zeros(3), g, precision=np.eye(3)) for _ in range(100_000)])
    assert np.max(np.abs(np.cov(x.T) - np.eye(3))) < 0.02


def test_mvn_two_by_two_precision():
    g = rng_stream(11)
    P = np.array([[2.0, 1.0], [1.0, 2.0]])
    x = np.array([sample_mvn(np.zeros(2), g, precision=P) for _ in range(100_000)])
    target = np.array([[2, -1], [-1, 2]]) / 3
    np.testing.assert_allclose(np.cov(x.T), target, rtol=0.03)
    y = np.array([sample_mvn(np.ones(2), g, cov=target) for _ in range(50_000)])
    np.testing.assert_allclose(y.mean(axis=0), 1.0, atol=0.02)
    np.testing.assert_allclose(np.cov(y.T), target, rtol=0.03)


def test_mvn_determinism_and_jitter():
    a = sample_mvn(np.zeros(4), rng_stream(1), precision=np.eye(4))
    np.testing.assert_array_equal(a, sample_mvn(np.zeros(4), rng_stream(1), precision=np.eye(4)))
    # rank-deficient by a hair: rescued by one jitter retry
    v = np.array([1.0, 1.0, 0.0])
    almost = np.outer(v, v) + np.diag([0.0, 0.0, 1.0]) + np.diag([1e-17, 0, 0])
    sample_mvn(np.zeros(3), rng_stream(1), precision=almost)
    with pytest.raises(NumericalError):
        sample_mvn(np.zeros(2), rng_stream(1), precision=-np.eye(2))


def test_mvn_batch_canonical_form():
    g = rng_stream(12)
    P = np.array([[3.0, 0.5], [0.5, 1.0]])
    h = np.array([1.0, -2.0])
    draws = sample_mvn_batch(np.tile(h, (100_000, 1)), np.tile(P, (100_000, 1, 1)), g)
    Sigma = np.linalg.inv(P)
    np.testing.assert_allclose(draws.mean(axis=0), Sigma @ h, atol=0.02)
    np.testing.assert_allclose(np.cov(draws.T), Sigma, rtol=0.03, atol=0.005)


def test_matrix_normal_columns():
    g = rng_stream(13)
    R = np.array([[1.0, 0.3], [0.3, 0.5]])
    M = np.array([[1.0, -1.0, 0.0], [2.0, 0.0, 3.0]])
    scales = np.array([1.0, 4.0, 0.25])
    draws = np.array([sample_matrix_normal_columns(M, R, scales, g) for _ in range(40_000)])
    np.testing.assert_allclose(draws.mean(axis=0), M, atol=0.03)
    for a in range(3):
        np.testing.assert_allclose(np.cov(draws[:, :, a].T), scales[a] * R, rtol=0.04, atol=0.004)
    # columns are independent
    assert abs(np.corrcoef(draws[:, 0, 0], draws[:, 0, 1])[0, 1]) < 0.02
    a = sample_matrix_normal_columns(M, R, scales, rng_stream(1))
    np.testing.assert_array_equal(a, sample_matrix_normal_columns(M, R, scales, rng_stream(1)))
    with pytest.raises(NumericalError):
        sample_matrix_normal_columns(M, -R, scales, g)
    with pytest.raises(DomainError):
        sample_matrix_normal_columns(M, R, -scales, g)
