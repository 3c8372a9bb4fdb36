import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from nested_sieve.acceptance import enumerate_fixed
from nested_sieve.env_stickbreak import GEM01, CaseA, CaseB, CaseC, FixedProbabilities, WLaw
from nested_sieve.errors import CapExceededError, ConfigError, DomainError
from nested_sieve.occupancy_tree import (
    GenerationStats,
    allocate_children,
    ceil_power,
    k_matrix_csv,
    k_n_s,
    occupancy_counts,
    rho_counts,
    rho_j,
    run_occupancy,
    uniform_mean_K,
)
from nested_sieve.prw_branching import UNIFORM_LAW, branching_counts

from conftest import THREADS, within_se

light = [GEM01, CaseA(WLaw.beta(2, 1)), CaseA(WLaw.beta(0.4, 1.5))]
# polynomially decaying sticks need about n^{alpha/(1-alpha)} children per box
heavy = [CaseB(0.8), CaseC(0.4, 0.3)]
envs = st.one_of(
    st.tuples(st.sampled_from(light), st.integers(1, 10**12)),
    st.tuples(st.sampled_from(heavy), st.integers(1, 10**5)),
)


def test_single_ball_goes_to_one_child(rng):
    out = allocate_children(1, GEM01, rng)
    assert len(out) == 1 and out[0][1] == 1


def test_zero_balls_rejected(rng):
    with pytest.raises(ConfigError):
        allocate_children(0, GEM01, rng)


@settings(max_examples=50, deadline=None)
@given(case=envs, seed=st.integers(0, 2**32))
def test_allocation_conserves_balls(case, seed):
    env, m = case
    out = allocate_children(m, env, seed)
    assert sum(b for _, b, _ in out) == m
    assert all(b >= 1 for _, b, _ in out)
    idx = [r for r, _, _ in out]
    assert idx == sorted(set(idx))
    assert all(lp < 0 for _, _, lp in out)


def test_first_child_gets_half_the_balls_on_average(rng):
    reps = 100_000
    first = np.array([dict((r, b) for r, b, _ in allocate_children(10_000, GEM01, rng)).get(1, 0) for _ in range(reps)])
    assert within_se(first.mean(), 5000.0, first.std() / math.sqrt(reps))


def test_one_ball_traces_one_path(rng):
    assert run_occupancy(1, GEM01, 6, rng).K == [1] * 6


def test_two_balls(rng):
    for _ in range(200):
        K = run_occupancy(2, GEM01, 5, rng).K
        assert set(K) <= {1, 2} and K == sorted(K)


def test_mean_k_n2_matches_exact_recursion():
    n = round(math.exp(10))
    K = occupancy_counts(n, GEM01, 2, 10_000, 7, threads=THREADS)
    exact = uniform_mean_K(n, 2)
    assert exact[1] == pytest.approx(56.76, abs=0.01)
    x = K[:, 1]
    assert within_se(x.mean(), exact[1], x.std() / 100)
    # and well away from the leading term 50
    assert x.mean() - 50 > 5


def test_exact_recursion_first_generation_is_harmonic():
    n = 1000
    assert uniform_mean_K(n, 1)[0] == pytest.approx(sum(1 / k for k in range(1, n + 1)))


def test_exact_recursion_agrees_with_mc_at_small_n():
    K = occupancy_counts(6, GEM01, 3, 40_000, 3)
    exact = uniform_mean_K(6, 3)
    for j in range(3):
        assert within_se(K[:, j].mean(), exact[j], K[:, j].std() / 200)


def _stats(hist):
    return GenerationStats(j=1, K=sum(hist.values()), hist=hist, total_balls=sum(r * k for r, k in hist.items()))


def test_k_n_s_examples():
    st_ = _stats({10: 3, 5: 2, 12: 1})
    assert k_n_s(st_, 100, 0.5) == 4
    assert k_n_s(st_, 100, 1.0) == st_.K
    assert k_n_s(st_, 12, 0.0) == 1
    assert k_n_s(_stats({1: 2}), 2, 0.0) == 0
    with pytest.raises(DomainError):
        k_n_s(st_, 100, 1.5)


@pytest.mark.parametrize("n,e,expected", [(100, 0.5, 10), (1000, 1 / 3, 10), (10, 0.5, 4), (7, 0.0, 1), (7, 1.0, 7)])
def test_ceil_power_is_exact_at_integers(n, e, expected):
    assert ceil_power(n, e) == expected


@settings(max_examples=30, deadline=None)
@given(case=envs, J=st.integers(1, 4), seed=st.integers(0, 2**32))
def test_conservation_and_monotonicity(case, J, seed):
    env, n = case
    run = run_occupancy(n, env, J, seed)
    prev = 0
    for s in run.stats:
        s.check(n)
        assert s.total_balls == n
        assert prev <= s.K <= n
        prev = s.K


def test_run_records_are_json(rng):
    run = run_occupancy(1000, GEM01, 3, rng, seed=5, keep_weights=True)
    doc = json.loads(run.to_json())
    assert [g["j"] for g in doc["generations"]] == [1, 2, 3]
    assert sum(int(r) * k for r, k in doc["generations"][2]["hist"].items()) == 1000
    assert len(run.stats[0].weight_list) == run.stats[0].K
    # weights of occupied boxes in a generation sum to at most 1
    assert math.fsum(math.exp(w) for w in run.stats[1].weight_list) <= 1 + 1e-12


def test_threshold_rejects_small_t(rng):
    with pytest.raises(DomainError):
        rho_j(GEM01, 1, 1.0, rng)
    assert rho_j(GEM01, 2, 1.0001, rng) <= 1


def test_rho_1_mean(rng):
    R = rho_counts(GEM01, 1, math.exp(5), 100_000, 11, threads=THREADS)[:, 0]
    assert within_se(R.mean(), 5.0, R.std() / math.sqrt(R.size))


def test_rho_3_mean():
    R = rho_counts(GEM01, 3, math.exp(10), 30_000, 12, threads=THREADS)[:, 2]
    assert within_se(R.mean(), 1000 / 6, R.std() / math.sqrt(R.size))


@pytest.mark.parametrize("env", [GEM01, CaseA(WLaw.beta(2, 1)), CaseB(1.0)])
def test_threshold_tree_matches_walk_counts(env):
    from nested_sieve.prw_branching import EnvironmentSteps

    t = 6.0
    tree = rho_counts(env, 2, math.exp(t), 10_000, 21, threads=THREADS)
    walk = branching_counts(EnvironmentSteps(env), 2, t, 10_000, 22, threads=THREADS)
    for j in range(2):
        assert stats.ks_2samp(tree[:, j], walk[:, j]).pvalue > 0.01


def test_single_replica_rho_agrees_with_batch():
    a = np.array([rho_j(GEM01, 2, math.exp(4), np.random.default_rng(k)) for k in range(3000)])
    b = rho_counts(GEM01, 2, math.exp(4), 3000, 1)[:, 1]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_rho_cap():
    with pytest.raises(CapExceededError):
        rho_counts(GEM01, 6, math.exp(80), 10, 1)


def test_coupled_threshold_counts_dominate_for_large_n():
    n = 10**6
    K, rho = occupancy_counts(n, GEM01, 3, 200, 4, rho_t=float(n))
    assert np.all(np.diff(K, axis=1) >= 0)
    assert rho.mean() > 0


def test_brute_force_distribution_small_n():
    probs = (0.5, 0.3, 0.2)
    R = 40_000
    for n in (1, 2, 3):
        law1, law2 = enumerate_fixed(probs, n)
        assert sum(law1.values()) == pytest.approx(1.0)
        K = occupancy_counts(n, FixedProbabilities(probs), 2, R, 100 + n)
        for g, law in enumerate((law1, law2)):
            for v in range(1, n + 1):
                p = law.get(v, 0.0)
                freq = np.mean(K[:, g] == v)
                se = math.sqrt(p * (1 - p) / R)
                assert abs(freq - p) <= 3 * se + 1e-15


def test_enumeration_by_hand():
    law1, law2 = enumerate_fixed((0.5, 0.3, 0.2), 2)
    same_first = 0.25 + 0.09 + 0.04
    assert law1[1] == pytest.approx(same_first)
    assert law2[1] == pytest.approx(same_first**2)


def test_threads_do_not_change_results():
    a = occupancy_counts(10**5, GEM01, 3, 300, 9, threads=1, chunk=50)
    b = occupancy_counts(10**5, GEM01, 3, 300, 9, threads=THREADS, chunk=50)
    assert np.array_equal(a, b)


def test_k_matrix_csv():
    text = k_matrix_csv(np.array([[1, 2], [3, 4]]))
    assert text.splitlines() == ["replica,K_1,K_2", "0,1,2", "1,3,4"]


def test_float_ball_counts():
    with pytest.raises(ConfigError):
        run_occupancy(2.5, GEM01, 1, 0)
    assert run_occupancy(1e3, GEM01, 1, 0).n == 1000
