import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from nested_sieve.errors import ConfigError, DomainError, FactorizationError
from nested_sieve.limit_gauss import (
    FixedGen,
    Intermediate,
    cholesky_factor,
    cov_matrix,
    covariance_json,
    covariance_se,
    pathwise_samples,
    pathwise_weights,
    sample_limit_vector,
    samples_csv,
    variance_se,
)

from conftest import within_se


def test_covariance_examples():
    c = cov_matrix(FixedGen((1, 2)))
    assert c[0, 0] == 1.0 and c[0, 1] == pytest.approx(0.5) and c[1, 1] == pytest.approx(1 / 3)
    r = cov_matrix(Intermediate((1.0, 2.0)))
    assert r[0, 0] == pytest.approx(0.5) and r[0, 1] == pytest.approx(1 / 3) and r[1, 1] == pytest.approx(0.25)
    ref = cov_matrix(Intermediate((1.0, 4.0), referee=True))
    assert np.allclose(np.diag(ref), 0.5)
    assert ref[0, 1] == pytest.approx(2 / 5)


def test_sampler_moments(rng):
    x = sample_limit_vector(Intermediate((1.0, 2.0)), rng, 1_000_000)
    se = variance_se(x)
    assert within_se(x[:, 0].var(), 0.5, se[0])
    assert within_se(x[:, 1].var(), 0.25, se[1])
    assert within_se(np.cov(x.T)[0, 1], 1 / 3, covariance_se(x[:, 0], x[:, 1]))
    assert np.all(np.abs(x.mean(axis=0)) < 3 * np.sqrt([0.5, 0.25]) / 1000)


def test_fixed_generation_moments(rng):
    x = sample_limit_vector(FixedGen((1, 2, 3)), rng, 400_000)
    target = cov_matrix(FixedGen((1, 2, 3)))
    emp = np.cov(x.T)
    for a in range(3):
        for b in range(3):
            assert within_se(emp[a, b], target[a, b], covariance_se(x[:, a], x[:, b]))


def test_pathwise_oracle_agrees_with_factorized_sampler(rng):
    pts = (1.0, 3.0)
    a = pathwise_samples(pts, rng, 100_000, step=1e-2)
    b = sample_limit_vector(Intermediate(pts), rng, 100_000)
    for k in range(2):
        assert stats.ks_2samp(a[:, k], b[:, k]).pvalue > 0.01
    assert np.cov(a.T)[0, 1] == pytest.approx(0.25, abs=0.01)


def test_pathwise_weights_integrate_exponential():
    # with unit Brownian increments the weights reproduce u * int_y^inf e^{-uy}
    c = pathwise_weights([2.0], 20.0, 1e-3)[:, 0]
    y = 1e-3 * np.arange(c.size)
    assert np.allclose(c, np.exp(-2.0 * y), atol=5e-3)


def test_scaling_of_the_process(rng):
    # R(cu) has the law of c^{-1/2} R(u)
    a = sample_limit_vector(Intermediate((3.0,)), rng, 50_000)[:, 0]
    b = sample_limit_vector(Intermediate((1.0,)), rng, 50_000)[:, 0] / math.sqrt(3.0)
    assert stats.ks_2samp(a, b).pvalue > 0.01


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.05, 20.0), min_size=1, max_size=6, unique=True))
def test_distinct_points_factorize(points):
    pts = sorted(points)
    if np.min(np.diff(pts), initial=1.0) < 1e-3:
        return
    L = cholesky_factor(cov_matrix(Intermediate(tuple(pts))))
    assert np.allclose(L @ L.T, cov_matrix(Intermediate(tuple(pts))), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=5, unique=True))
def test_generation_sets_factorize(idx):
    cholesky_factor(cov_matrix(FixedGen(tuple(sorted(idx)))))


def test_duplicate_points_rejected():
    with pytest.raises(FactorizationError) as exc:
        cov_matrix(Intermediate((1.0, 1.0)))
    assert exc.value.condition == math.inf


def test_near_singular_matrix_reports_condition():
    with pytest.raises(FactorizationError) as exc:
        cholesky_factor(np.array([[1.0, 1.0], [1.0, 1.0 - 1e-17]]))
    assert exc.value.condition > 1e10 or math.isinf(exc.value.condition)


def test_domain_errors():
    with pytest.raises(DomainError):
        Intermediate((0.0,))
    with pytest.raises(DomainError):
        Intermediate((1.0, -2.0))
    with pytest.raises(DomainError):
        pathwise_samples((0.0,), 1, 10)
    with pytest.raises(ConfigError):
        FixedGen((0,))
    with pytest.raises(ConfigError):
        sample_limit_vector(FixedGen((1,)), 1, 0)


def test_exports(rng):
    fam = Intermediate((1.0, 2.5))
    x = sample_limit_vector(fam, rng, 3)
    lines = samples_csv(x, fam).splitlines()
    assert lines[0] == "R(1),R(2.5)" and len(lines) == 4
    doc = json.loads(covariance_json(FixedGen((1, 2))))
    assert doc["covariance"][0][1] == pytest.approx(0.5)
    assert samples_csv(x[:, :1], FixedGen((2,))).splitlines()[0] == "N(2)"


def test_sampling_is_reproducible():
    a = sample_limit_vector(FixedGen((1, 2)), 5, 10)
    b = sample_limit_vector(FixedGen((1, 2)), 5, 10)
    assert np.array_equal(a, b)
