import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from nested_sieve.env_stickbreak import CaseA, CaseB, WLaw
from nested_sieve.errors import ConfigError, DomainError
from nested_sieve.prw_branching import UNIFORM_LAW, PerturbedWalkLaw
from nested_sieve.renewal_calc import (
    Grid,
    binomial_bound,
    erlang_identity_sides,
    erlang_tail,
    law_constants,
    log_partial_exp_sum,
    lorden_check,
    power_bounds,
    power_over_factorial,
    renewal_table,
)

BETA21 = PerturbedWalkLaw.from_w(WLaw.beta(2, 1))


@pytest.fixture(scope="module")
def uniform_table():
    return renewal_table(UNIFORM_LAW, Grid(0.01, 20.0), j_max=5)


@pytest.fixture(scope="module")
def beta_table():
    return renewal_table(BETA21, Grid(0.01, 30.0), j_max=6)


def test_grid():
    g = Grid(0.5, 2.0)
    assert g.count == 5
    assert np.allclose(g.nodes, [0, 0.5, 1, 1.5, 2])
    with pytest.raises(ConfigError):
        Grid(0.3, 1.0)
    with pytest.raises(ConfigError):
        Grid(0.0, 1.0)


def test_uniform_renewal_function(uniform_table):
    t = uniform_table.t
    h = uniform_table.grid.h
    assert uniform_table.U[0] == pytest.approx(1.0)
    assert np.max(np.abs(uniform_table.U - (1 + t))) <= h
    assert np.max(np.abs(uniform_table.V - t)) <= 2 * h
    assert np.max(np.abs(uniform_table.Vbar - (t - 1 + np.exp(-t)))) <= 2 * h
    k = int(round(7.0 / h))
    assert uniform_table.U[k] == pytest.approx(8.0, abs=h)


@pytest.mark.parametrize("j", [2, 3, 4, 5])
def test_uniform_iterated_functions(uniform_table, j):
    t = uniform_table.t
    exact = t**j / math.factorial(j)
    err = np.abs(uniform_table.V_of(j) - exact)
    # the discretization error of V_j grows like j h t^{j-1} / (j-1)!
    allowed = 2 * j * uniform_table.grid.h * t ** (j - 1) / math.factorial(j - 1) + 1e-12
    assert np.all(err <= allowed)


def test_second_order_refinement():
    errs = []
    for h in (0.02, 0.01, 0.005):
        tab = renewal_table(UNIFORM_LAW, Grid(h, 10.0))
        errs.append(np.max(np.abs(tab.V - tab.t)))
    assert errs[0] / errs[1] >= 1.8 and errs[1] / errs[2] >= 1.8


def test_beta_renewal_function_is_exact_for_exponential_gaps(beta_table):
    # xi is Exp(2) here, so U(t) = 1 + 2t
    t = beta_table.t
    assert np.max(np.abs(beta_table.U - (1 + 2 * t))) <= 2 * beta_table.grid.h


def test_stationary_sandwich(beta_table):
    c = beta_table.constants
    t = beta_table.t
    gap = t / c.m - beta_table.Vbar
    # relative slack only absorbs floating point rounding of the tail integral
    assert np.all(gap >= -1e-9)
    assert np.all(gap <= c.cbar * (1 + 1e-9))


def test_power_bound_holds(beta_table):
    c = beta_table.constants
    t = beta_table.t[1:]
    for j in range(1, 7):
        dev = np.abs(beta_table.V_of(j)[1:] - power_over_factorial(t, j, c.m))
        assert np.all(dev <= binomial_bound(j, t, c.c, c.m))


def test_power_bounds_examples():
    b = power_bounds(3, 100.0, 1.0, 1.0)
    assert b.full_sum == pytest.approx(15301.0)
    assert b.simplified == pytest.approx(30000.0)
    assert b.applicable
    assert not power_bounds(11, 100.0, 1.0, 1.0).applicable
    with pytest.raises(DomainError):
        power_bounds(0, 1.0, 1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(j=st.integers(1, 12), t=st.integers(0, 200), c=st.integers(1, 5), m=st.sampled_from([1, 2]))
def test_binomial_bound_against_exact_sum(j, t, c, m):
    exact = sum(
        Fraction(math.comb(j, i)) * Fraction(c) ** (j - i) * Fraction(t) ** i / (math.factorial(i) * Fraction(m) ** i)
        for i in range(j)
    )
    assert binomial_bound(j, float(t), float(c), float(m)) == pytest.approx(float(exact), rel=1e-10)


def test_binomial_bound_vectorized():
    out = binomial_bound(2, np.array([0.0, 100.0]), 1.0, 1.0)
    assert np.allclose(out, [1.0, 201.0])


def test_high_generations_switch_to_logs():
    tab = renewal_table(UNIFORM_LAW, Grid(0.01, 100.0), j_max=40)
    with pytest.raises(DomainError):
        tab.V_of(40)
    lv = tab.log_V_of(40)[-1]
    assert lv == pytest.approx(40 * math.log(100.0) - math.lgamma(41), abs=0.05)
    with pytest.raises(KeyError):
        tab.V_of(41)


def test_interpolator_pickles(uniform_table):
    import pickle

    f = pickle.loads(pickle.dumps(uniform_table.interpolator(2)))
    assert f(3.0) == pytest.approx(4.5, abs=0.01)
    assert f(-1.0) == 0.0
    assert uniform_table.interpolator(0)(-1.0) == 1.0


def test_law_constants():
    u = law_constants(UNIFORM_LAW)
    assert (u.mu, u.sigma2, u.eta_mean) == pytest.approx((1.0, 1.0, 1.0))
    assert u.c0 == pytest.approx(0.5)
    b = law_constants(CaseA(WLaw.beta(2, 1)))
    assert (b.mu, b.sigma2, b.eta_mean) == pytest.approx((0.5, 0.25, 1.5))
    assert b.c0 == pytest.approx(0.5) and b.c == pytest.approx(3.0) and b.cbar == pytest.approx(3.0)
    # agrees with the digamma closed forms
    w = WLaw.beta(0.7, 2.5)
    k = law_constants(w)
    assert k.mu == pytest.approx(special.digamma(3.2) - special.digamma(0.7), rel=1e-8)
    assert k.sigma2 == pytest.approx(special.polygamma(1, 0.7) - special.polygamma(1, 3.2), rel=1e-8)
    with pytest.raises(ConfigError):
        law_constants(CaseB(0.5))


def test_lorden_check_reports_without_raising(uniform_table, caplog):
    rep = lorden_check(uniform_table)
    assert rep["max_excess"] == pytest.approx(1.0, abs=0.01)
    assert not rep["holds"] and rep["violations"] > 0
    assert "above c0" in caplog.text
    assert lorden_check(uniform_table, c0=1.01)["holds"]


def test_erlang_tail():
    assert erlang_tail(2, 1.0) == pytest.approx(2 / math.e)
    assert erlang_tail(3, 0.0) == 1.0
    oracle = integrate.quad(lambda y: y * math.exp(-y), 1.0, np.inf)[0]
    assert erlang_tail(2, 1.0) == pytest.approx(oracle)
    with pytest.raises(DomainError):
        erlang_tail(0, 1.0)
    with pytest.raises(DomainError):
        erlang_tail(1, -1.0)


@settings(max_examples=80, deadline=None)
@given(k=st.integers(1, 200), x=st.floats(0.0, 500.0))
def test_erlang_tail_matches_incomplete_gamma(k, x):
    assert erlang_tail(k, x) == pytest.approx(special.gammaincc(k, x), rel=1e-9, abs=1e-300)


def test_log_partial_exp_sum():
    assert log_partial_exp_sum(3, 2.0) == pytest.approx(math.log(1 + 2 + 2))
    assert log_partial_exp_sum(3, 0.0) == 0.0


@pytest.mark.parametrize("n,j", [(math.exp(5), 3), (10.0, 1), (1e6, 4)])
def test_erlang_identity(n, j):
    lhs, rhs = erlang_identity_sides(n, j)
    assert lhs == pytest.approx(rhs, rel=1e-8)
    if j == 3 and n == math.exp(5):
        assert rhs == pytest.approx(18.5)


def test_exports(beta_table):
    lines = beta_table.to_csv(j_max=3).splitlines()
    assert lines[0] == "t,U,V,Vbar,V_2,V_3"
    assert len(lines) == beta_table.grid.count + 1
    doc = json.loads(beta_table.constants_json())
    assert doc["law"] == "beta(2,1)" and doc["m"] == pytest.approx(0.5)
