"""The acceptance suite: ten numbered criteria with fixed seeds and tolerances.

Profiles scale the replica counts: ``smoke`` uses a tenth of the nominal
counts, ``desk`` the nominal ones and ``deep`` ten times more. Only ``desk``
and ``deep`` reach the nominal statistical power.
"""

from __future__ import annotations

import itertools
import math
import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import limit_gauss
from .clt_harness import ExperimentConfig, run_fixed_gen, run_identity_checks, run_moment_bound
from .env_stickbreak import GEM01, CaseA, CaseB, CaseC, FixedProbabilities, ProbabilityStream, WLaw
from .errors import ConfigError
from .occupancy_tree import occupancy_counts, rho_counts, run_occupancy
from .prw_branching import UNIFORM_LAW, PerturbedWalkLaw, branching_counts
from .renewal_calc import Grid, binomial_bound, erlang_identity_sides, power_over_factorial, power_bounds, renewal_table

ACCEPTANCE_SEED = 12345
PROFILES = {"smoke": 0.1, "desk": 1.0, "deep": 10.0}


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number:>2}: {self.title} ({self.seconds:.1f}s) {self.detail}"


def _scaled(n: int, profile: str) -> int:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    return max(100, int(round(n * PROFILES[profile])))


# ----------------------------------------------------------------------------


def criterion_1(profile="desk", threads=1, seed=ACCEPTANCE_SEED):
    R = _scaled(100_000, profile)
    rho = rho_counts(GEM01, 3, math.exp(10.0), R, seed, threads=threads)
    parts, ok = [], True
    for j in (1, 2, 3):
        x = rho[:, j - 1]
        mean, se = x.mean(), x.std(ddof=1) / math.sqrt(R)
        target = 10.0**j / math.factorial(j)
        good = abs(mean - target) <= 3 * se
        ok &= good
        parts.append(f"j={j}: {mean:.3f}±{se:.3f} vs {target:.3f}")
    return ok, "; ".join(parts)


def criterion_2(profile="desk", threads=1, seed=ACCEPTANCE_SEED):
    h = 0.01
    tab = renewal_table(UNIFORM_LAW, Grid(h, 50.0), j_max=6)
    t = tab.t
    v_dev = float(np.abs(tab.V - t).max())
    ok = v_dev < 2 * h
    parts = [f"max|V-t|={v_dev:.2e} (<{2 * h:g})"]
    for j in range(2, 7):
        dev = np.abs(tab.Vj[j] - power_over_factorial(t, j))
        tol = j * 2 * h * power_over_factorial(t, j - 1)
        worst = float((dev[1:] / tol[1:]).max())
        ok &= bool(np.all(dev <= tol))
        parts.append(f"j={j}: dev/tol<={worst:.3f}")
    return ok, "; ".join(parts)


def criterion_3(profile="desk", threads=1, seed=ACCEPTANCE_SEED):
    ok, parts = True, []
    for law in (UNIFORM_LAW, PerturbedWalkLaw.from_w(WLaw.beta(2, 1))):
        tab = renewal_table(law, Grid(0.01, 100.0), j_max=6)
        c, m = tab.constants.c, tab.constants.m
        worst = 0.0
        for j in range(1, 7):
            dev = np.abs(tab.V_of(j) - power_over_factorial(tab.t, j, m))
            bound = binomial_bound(j, tab.t, c, m)
            worst = max(worst, float((dev / bound).max()))
            ok &= bool(np.all(dev <= bound))
        parts.append(f"{law.name}: max dev/bound={worst:.3f}")
    # simplified bound dominates wherever j <= sqrt(t/(2cm))
    checked = 0
    for c, m in ((1.0, 1.0), (3.0, 0.5)):
        for j in range(1, 7):
            for t in np.linspace(1.0, 200.0, 400):
                b = power_bounds(j, float(t), c, m)
                if b.applicable:
                    checked += 1
                    ok &= b.full_sum <= b.simplified * (1 + 1e-12)
    parts.append(f"simplified >= full at {checked} applicable (j,t,c,m)")
    return ok, "; ".join(parts)


def criterion_4(profile="desk", threads=1, seed=ACCEPTANCE_SEED):
    cfg = ExperimentConfig(kind="fixed_gen", t=100.0, generations=2, replicas=_scaled(10_000, profile), seed=seed, threads=threads)
    rep = run_fixed_gen(cfg.validate())
    wanted = [c for c in rep.checks if c["name"].startswith(("cov[", "ks["))]
    ok = all(c["passed"] for c in wanted)
    est = {e["name"]: e for e in rep.estimates}
    detail = ", ".join(
        f"{k}={est[k]['value']:.4f}" for k in ("cov[1,1]", "cov[1,2]", "cov[2,2]")
    ) + ", " + ", ".join(f"{k} p={est[k]['pvalue']:.3g}" for k in ("ks[Z_1]", "ks[Z_2]"))
    return ok, detail


def criterion_5(profile="desk", threads=1, seed=ACCEPTANCE_SEED):
    count = _scaled(1_000_000, profile)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5, 0)))
    s = limit_gauss.sample_limit_vector(limit_gauss.Intermediate((1.0, 2.0)), rng, count)
    var = float(s[:, 0].var(ddof=1))
    var_se = float(limit_gauss.variance_se(s[:, :1])[0])
    cov = float(np.cov(s.T)[0, 1])
    cov_se = limit_gauss.covariance_se(s[:, 0], s[:, 1])
    ok = abs(var - 0.5) <= 3 * var_se and abs(cov - 1 / 3) <= 3 * cov_se
    paths = _scaled(50_000, profile)
    prng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5, 1)))
    p = limit_gauss.pathwise_samples([1.0], prng, paths, step=1e-3)
    pvar = float(p.var(ddof=1))
    ok &= abs(pvar - 0.5) <= 0.02 * 0.5
    return ok, f"Var R(1)={var:.5f}±{var_se:.5f}, Cov={cov:.5f}±{cov_se:.5f}, pathwise Var={pvar:.4f} ({paths} paths)"


def criterion_6(profile="desk", threads=1, seed=ACCEPTANCE_SEED):
    cfg = ExperimentConfig(
        kind="moment_bound", t_grid=(10.0, 20.0, 40.0), j_grid=(2, 3), replicas=_scaled(10_000, profile), seed=seed, threads=threads
    )
    rep = run_moment_bound(cfg.validate())
    ratios = [e for e in rep.estimates if e["name"].startswith("ratio[")]
    spread = next(e["value"] for e in rep.estimates if e["name"] == "ratio_spread")
    ok = rep.passed and len(ratios) == 6
    return ok, f"ratios {min(e['value'] for e in ratios):.3f}..{max(e['value'] for e in ratios):.3f}, max/min={spread:.2f} (<5)"


def criterion_7(profile="desk", threads=1, seed=ACCEPTANCE_SEED):
    cfg = ExperimentConfig(kind="identity_checks", t_grid=(20.0, 40.0, 80.0), replicas=_scaled(10_000, profile), seed=seed, threads=threads)
    rep = run_identity_checks(cfg.validate())
    detail = "; ".join(f"{c['name']}: {c['detail']}" for c in rep.checks if c["detail"])
    return rep.passed, detail


def criterion_8(profile="desk", threads=1, seed=ACCEPTANCE_SEED):
    cases = _scaled(1000, profile)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(8,)))
    envs = [GEM01, CaseA(WLaw.beta(2, 1)), CaseA(WLaw.beta(0.5, 0.7)), CaseB(0.7), CaseC(0.3, 0.5)]
    bad = Counter()
    for _ in range(cases):
        env = envs[rng.integers(len(envs))]
        n = int(math.exp(rng.uniform(0, math.log(10**6))))
        J = int(rng.integers(1, 6))
        run = run_occupancy(n, env, J, rng)
        prev = 0
        for st in run.stats:
            if sum(r * k for r, k in st.hist.items()) != n or sum(st.hist.values()) != st.K:
                bad["conservation"] += 1
            if st.K < prev or st.K > n:
                bad["monotone"] += 1
            prev = st.K
        stream = ProbabilityStream(env, rng)
        last = 1.0
        for _ in range(int(rng.integers(1, 60))):
            p, res = stream.next_probability()
            if abs(stream.total + res - 1.0) > 1e-12:
                bad["partial_sums"] += 1
            if not res < last:
                bad["residual"] += 1
            last = res
        law = UNIFORM_LAW if rng.random() < 0.5 else PerturbedWalkLaw.from_w(WLaw.beta(2, 1))
        j = int(rng.integers(1, 4))
        t = float(rng.uniform(0.01, 12.0))
        plain, stat = branching_counts(law, j, t, 1, int(rng.integers(2**63)), coupled=True)
        if np.any(stat > plain):
            bad["dominance"] += 1
    return not bad, f"{cases} cases per property, violations: {dict(bad) or 0}"


def enumerate_fixed(probs, n: int):
    """Exact laws of ``K_n(1)`` and ``K_n(2)`` when every node uses ``probs``."""
    k = len(probs)
    paths = [(a, b) for a in range(k) for b in range(k)]
    pw = [probs[a] * probs[b] for a, b in paths]
    law1, law2 = Counter(), Counter()
    for assign in itertools.product(range(len(paths)), repeat=n):
        p = math.prod(pw[i] for i in assign)
        law1[len({paths[i][0] for i in assign})] += p
        law2[len(set(assign))] += p
    return dict(law1), dict(law2)


def criterion_9(profile="desk", threads=1, seed=ACCEPTANCE_SEED):
    probs = (0.5, 0.3, 0.2)
    env = FixedProbabilities(probs)
    R = _scaled(100_000, profile)
    ok, compared, worst = True, 0, 0.0
    for n in range(1, 5):
        exact = enumerate_fixed(probs, n)
        K = occupancy_counts(n, env, 2, R, seed + n, threads=threads)
        for g in range(2):
            for value in range(1, n + 1):
                p = exact[g].get(value, 0.0)
                freq = float(np.mean(K[:, g] == value))
                se = math.sqrt(p * (1 - p) / R)
                compared += 1
                if se == 0:
                    ok &= freq == p
                else:
                    z = abs(freq - p) / se
                    worst = max(worst, z)
                    ok &= z <= 3
    return ok, f"{compared} probabilities compared over n=1..4, max |z|={worst:.2f} (<=3)"


def criterion_10(profile="desk", threads=1, seed=ACCEPTANCE_SEED):
    lhs, rhs = erlang_identity_sides(math.exp(5.0), 3)
    return abs(lhs - rhs) <= 1e-8, f"quadrature {lhs:.12f} vs sum {rhs:.12f} (target 18.5)"


CRITERIA: dict[int, tuple[str, Callable, float]] = {
    1: ("exact mean of rho_j(e^t), uniform case", criterion_1, 120),
    2: ("renewal exactness, uniform case", criterion_2, 60),
    3: ("binomial-sum bounds for V_j", criterion_3, 60),
    4: ("fixed-generation CLT covariance", criterion_4, 900),
    5: ("limit-process sampler", criterion_5, 120),
    6: ("moment-bound boundedness", criterion_6, 600),
    7: ("vanishing differences", criterion_7, 600),
    8: ("conservation and monotonicity properties", criterion_8, 120),
    9: ("brute-force oracle equivalence", criterion_9, 60),
    10: ("Erlang quadrature identity", criterion_10, 1),
}


def run_criterion(number: int, profile: str = "desk", threads: Optional[int] = 1, seed: int = ACCEPTANCE_SEED) -> CriterionResult:
    title, func, budget = CRITERIA[number]
    start = time.perf_counter()
    passed, detail = func(profile, threads, seed)
    secs = time.perf_counter() - start
    if profile == "desk" and secs > budget:
        detail += f" [runtime {secs:.1f}s over budget {budget}s]"
        passed = False
    return CriterionResult(number, title, bool(passed), detail, secs)


def run_all(profile: str = "desk", threads: Optional[int] = 1, seed: int = ACCEPTANCE_SEED, only=None, echo=None) -> list:
    results = []
    for number in sorted(CRITERIA):
        if only and number not in only:
            continue
        res = run_criterion(number, profile, threads, seed)
        if echo:
            echo(res.line())
        results.append(res)
    return results
