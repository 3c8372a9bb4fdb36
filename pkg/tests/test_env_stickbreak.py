import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from nested_sieve.env_stickbreak import (
    GEM01,
    CaseA,
    CaseB,
    CaseC,
    FixedProbabilities,
    ProbabilityStream,
    WLaw,
    environment_from_config,
    next_probability,
    sample_w,
)
from nested_sieve.errors import ConfigError, StreamExhausted

from conftest import within_se

cases = st.one_of(
    st.just(GEM01),
    st.builds(lambda a, b: CaseA(WLaw.beta(a, b)), st.floats(0.05, 5), st.floats(0.05, 5)),
    st.builds(CaseB, st.floats(0.05, 5)),
    st.builds(lambda a, th: CaseC(a, th), st.floats(0.05, 0.95), st.floats(0.0, 3.0)),
)


def test_case_b_first_factor_is_uniform(rng):
    logw, _ = CaseB(1.0).log_pair(1, 100_000, rng)
    assert stats.kstest(np.exp(logw), "uniform").pvalue > 0.01


def test_uniform_mean_of_a_million_draws(rng):
    w = GEM01.w.sample(10**6, rng)
    assert abs(w.mean() - 0.5) <= 3 * (1 / math.sqrt(12)) / 1e3


def test_gem_first_factor_mean_matches_quadrature(rng):
    a, b = 1.0, 0.5  # Beta(theta + alpha, 1 - alpha) at alpha = theta = 1/2
    dens = lambda w: w ** (a - 1) * (1 - w) ** (b - 1) / math.exp(math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
    oracle = integrate.quad(lambda w: w * dens(w), 0, 1)[0]
    assert oracle == pytest.approx(2 / 3, abs=1e-9)
    logw, _ = CaseC(0.5, 0.5).log_pair(1, 200_000, rng)
    w = np.exp(logw)
    assert within_se(w.mean(), oracle, w.std() / math.sqrt(w.size))


def test_case_b_second_factor_law(rng):
    # Beta(2 alpha, 1) at r = 2: P{W <= x} = x^(2 alpha)
    logw, _ = CaseB(0.75).log_pair(2, 50_000, rng)
    assert stats.kstest(np.exp(logw), lambda x: x**1.5).pvalue > 0.01


def test_two_gamma_path_matches_beta_law(rng):
    w = WLaw.beta(0.3, 2.5).sample(50_000, rng)
    assert stats.kstest(w, stats.beta(0.3, 2.5).cdf).pvalue > 0.01


def test_minus_log_w_is_standard_exponential(rng):
    logw, log1mw = GEM01.log_pair(1, 10**6, rng)
    x = -logw
    se_mean = x.std() / 1e3
    se_var = math.sqrt(((x - x.mean()) ** 4).mean() - x.var() ** 2) / 1e3
    assert within_se(x.mean(), 1.0, se_mean)
    assert within_se(x.var(), 1.0, se_var)
    # the pair is consistent: W + (1 - W) = 1
    assert np.allclose(np.exp(logw) + np.exp(log1mw), 1.0)


def test_advance_substitution():
    s = ProbabilityStream(GEM01, 0)
    p, rest = s.advance(0.25)
    assert (p, rest) == (0.75, 0.25)
    assert s.index == 2


def test_mean_log_residual_grows_linearly(rng):
    r, count = 3, 100_000
    vals = np.empty(count)
    for k in range(count):
        s = ProbabilityStream(GEM01, rng)
        for _ in range(r):
            next_probability(s)
        vals[k] = -math.log(s.residual)
    assert within_se(vals.mean(), r, vals.std() / math.sqrt(count))


@settings(max_examples=60, deadline=None)
@given(case=cases, seed=st.integers(0, 2**32), draws=st.integers(1, 80))
def test_partial_sums_and_monotone_residual(case, seed, draws):
    s = ProbabilityStream(case, seed)
    last = 1.0
    for _ in range(draws):
        try:
            p, res = s.next_probability()
        except StreamExhausted:
            break
        assert 0 < p < 1
        assert res < last
        assert abs(s.total + res - 1.0) <= 1e-12
        last = res


@settings(max_examples=40, deadline=None)
@given(case=cases, r=st.integers(1, 50), seed=st.integers(0, 2**32))
def test_factors_strictly_inside_unit_interval(case, r, seed):
    w = sample_w(case, r, seed)
    assert 0.0 < w < 1.0


def test_tiny_shapes_never_hit_the_boundary(rng):
    logw, log1mw = WLaw.beta(0.01, 0.01).log_pair(20_000, rng)
    assert np.all(np.isfinite(logw)) and np.all(logw < 0) and np.all(log1mw < 0)


def test_same_seed_same_stream():
    a = ProbabilityStream(CaseC(0.3, 1.0), 99).take(50)
    b = ProbabilityStream(CaseC(0.3, 1.0), 99).take(50)
    assert np.array_equal(a, b)


def test_iteration_stops_on_exhaustion():
    s = ProbabilityStream(FixedProbabilities((0.5, 0.3, 0.2)), 0)
    assert list(s) == pytest.approx([0.5, 0.3, 0.2])
    with pytest.raises(StreamExhausted):
        s.next_probability()


@pytest.mark.parametrize(
    "bad",
    [
        lambda: CaseB(0.0),
        lambda: CaseC(1.0, 0.5),
        lambda: CaseC(0.5, -0.5),
        lambda: WLaw.beta(-1, 1),
        lambda: FixedProbabilities((0.5, 0.6)),
        lambda: environment_from_config({"case": "Z"}),
        lambda: environment_from_config({"case": "B"}),
    ],
)
def test_invalid_parameters(bad):
    with pytest.raises(ConfigError):
        bad()


@pytest.mark.parametrize(
    "cfg",
    [
        {"case": "A", "w": "uniform"},
        {"case": "A", "w": {"beta": [2.0, 1.0]}},
        {"case": "B", "alpha": 0.5},
        {"case": "C", "alpha": 0.5, "theta": 0.25},
        {"case": "fixed", "probs": [0.5, 0.5]},
    ],
)
def test_config_round_trip(cfg):
    env = environment_from_config(cfg)
    assert environment_from_config(env.to_config()) == env


def test_gem01_shorthand():
    assert environment_from_config("gem01") == GEM01
