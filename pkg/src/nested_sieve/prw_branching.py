"""Perturbed random walks and the branching random walk they generate.

A perturbed random walk has points ``T_i = S_{i-1} + eta_i`` where ``S`` is a
zero-delayed walk with increments ``xi_i`` and ``(xi_i, eta_i)`` are iid copies
of a pair with positive, possibly dependent, components. The stationary
version shifts every point by a delay drawn from the density
``P{xi > x} / m``.

The branching walk places the first generation at the points of one copy of
the walk, and every individual at position ``x`` spawns its own independent
copy shifted by ``x``. ``N_j(t)`` counts generation-``j`` individuals at
positions ``<= t``.

Everything here is vectorized over a *frontier*: the array of individuals
of one generation across all replicas, each carrying its remaining budget
``t - position``. One round of the inner loop draws the ``r``-th increment
pair for every individual whose walk is still below its budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from .env_stickbreak import CaseA, EnvironmentCase, WLaw
from .errors import CapExceededError, ConfigError
from .seeding import as_generator, chunk_rng, fan_out, split_replicas

POINT_CAP = 10**7
FRONTIER_BUDGET = 2_000_000
_MAX_ROUNDS = 10**6


@dataclass(frozen=True)
class PerturbedWalkLaw:
    """Joint law of the increment pair ``(xi, eta)`` plus its constants.

    Laws derived from a stick-breaking factor ``W`` use
    ``(xi, eta) = (-log W, -log(1 - W))``; build them with :meth:`from_w`.
    Custom laws supply ``sampler(size, rng) -> (xi, eta)`` and the marginal
    CDFs used by the renewal tables.
    """

    name: str
    sampler: Callable = field(repr=False, compare=False)
    xi_cdf: Callable = field(repr=False, compare=False)
    eta_cdf: Callable = field(repr=False, compare=False)
    m: float
    s2: float
    eta_mean: float
    lattice: bool = False
    delay_cdf: Optional[Callable] = field(default=None, repr=False, compare=False)
    delay_ppf: Optional[Callable] = field(default=None, repr=False, compare=False)
    w: Optional[WLaw] = None

    def __post_init__(self):
        if not (0 < self.m < math.inf):
            raise ConfigError(f"mean increment must be finite and positive, got {self.m}")

    @classmethod
    def from_w(cls, w: WLaw = WLaw.uniform()) -> "PerturbedWalkLaw":
        a, b = w.a, w.b
        # E|log W| and Var log W for Beta(a, b)
        m = float(special.digamma(a + b) - special.digamma(a))
        s2 = float(special.polygamma(1, a) - special.polygamma(1, a + b))
        eta_mean = float(special.digamma(a + b) - special.digamma(b))

        def sampler(size, rng):
            logw, log1mw = w.log_pair(size, rng)
            return -logw, -log1mw

        def xi_cdf(x):
            x = np.asarray(x, dtype=float)
            # P{-log W <= x} = P{W >= e^-x}
            return np.where(x < 0, 0.0, special.betainc(b, a, -np.expm1(-np.maximum(x, 0.0))))

        def eta_cdf(y):
            y = np.asarray(y, dtype=float)
            return np.where(y < 0, 0.0, special.betainc(a, b, -np.expm1(-np.maximum(y, 0.0))))

        delay_cdf = delay_ppf = None
        if b == 1.0:
            # xi ~ Exp(a): the stationary delay is again Exp(a)
            def delay_cdf(x):
                return -np.expm1(-a * np.maximum(np.asarray(x, dtype=float), 0.0))

            def delay_ppf(u):
                return -np.log1p(-np.asarray(u, dtype=float)) / a

        name = "uniform" if w.is_uniform else f"beta({a:g},{b:g})"
        return cls(name, sampler, xi_cdf, eta_cdf, m, s2, eta_mean, False, delay_cdf, delay_ppf, w)

    def __reduce__(self):
        # the closures built by from_w do not pickle; rebuild them in workers
        if self.w is not None:
            return (PerturbedWalkLaw.from_w, (self.w,))
        return super().__reduce__()

    def sample(self, size: int, rng: np.random.Generator):
        return self.sampler(size, rng)

    def step(self, r: int, size: int, rng: np.random.Generator):
        return self.sampler(size, rng)

    @property
    def xi_second_moment(self) -> float:
        return self.s2 + self.m**2


UNIFORM_LAW = PerturbedWalkLaw.from_w(WLaw.uniform())


def law_from_environment(env: EnvironmentCase) -> PerturbedWalkLaw:
    if not isinstance(env, CaseA):
        raise ConfigError("only iid stick-breaking (case A) environments define a perturbed walk law")
    return PerturbedWalkLaw.from_w(env.w)


class EnvironmentSteps:
    """Increment source for environments whose factors depend on the index ``r``."""

    def __init__(self, env: EnvironmentCase):
        self.env = env

    def step(self, r: int, size: int, rng: np.random.Generator):
        logw, log1mw = self.env.log_pair(r, size, rng)
        return -logw, -log1mw


def as_step_source(source):
    if isinstance(source, (PerturbedWalkLaw, EnvironmentSteps)):
        return source
    if isinstance(source, WLaw):
        return PerturbedWalkLaw.from_w(source)
    return EnvironmentSteps(source)


# ----------------------------------------------------------------------------
# stationary delay


class StationaryDelay:
    """Sampler for the delay with density ``P{xi > x} / m``.

    Uses the law's closed form when it has one, else inverts a tabulated CDF
    built by cumulative Simpson integration of the tail ``1 - F(x)``.
    """

    def __init__(self, law: PerturbedWalkLaw, h: float = 1e-4, tail_eps: float = 1e-13):
        if law.lattice:
            raise ConfigError("stationary delay is undefined for lattice increment laws")
        self.law = law
        self._grid = None
        self._cdf = None
        if law.delay_ppf is None:
            x_max = 1.0
            while 1.0 - float(law.xi_cdf(x_max)) > tail_eps:
                x_max *= 2.0
            n = int(math.ceil(x_max / h))
            grid = np.linspace(0.0, x_max, n + 1)
            tail = 1.0 - law.xi_cdf(grid)
            cdf = integrate.cumulative_simpson(tail, x=grid, initial=0.0) / law.m
            self._grid = grid
            self._cdf = np.maximum.accumulate(cdf)

    def cdf(self, x):
        if self.law.delay_cdf is not None:
            return self.law.delay_cdf(x)
        return np.interp(x, self._grid, self._cdf / self._cdf[-1], left=0.0, right=1.0)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(size)
        if self.law.delay_ppf is not None:
            return self.law.delay_ppf(u)
        return np.interp(u * self._cdf[-1], self._cdf, self._grid)


_delay_cache: dict = {}


def delay_sampler(law: PerturbedWalkLaw) -> StationaryDelay:
    key = id(law)
    hit = _delay_cache.get(key)
    if hit is None or hit.law is not law:
        hit = StationaryDelay(law)
        _delay_cache[key] = hit
    return hit


def sample_stationary_delay(law: PerturbedWalkLaw, rng, size: Optional[int] = None):
    rng = as_generator(rng)
    out = delay_sampler(law).sample(1 if size is None else size, rng)
    return float(out[0]) if size is None else out


# ----------------------------------------------------------------------------
# single walks


@dataclass
class PointSet:
    points: np.ndarray
    stationary: bool = False
    delay: float = 0.0
    t_max: float = 0.0

    def count(self, t: float) -> int:
        return int(np.searchsorted(self.points, t, side="right"))

    def __len__(self):
        return int(self.points.size)


def sample_prw_points(law, t_max: float, rng, stationary: bool = False) -> PointSet:
    """All points ``T_i <= t_max`` of one (optionally stationary) perturbed walk."""
    if not t_max > 0:
        raise ConfigError("t_max must be positive")
    rng = as_generator(rng)
    source = as_step_source(law)
    delay = sample_stationary_delay(source, rng) if stationary else 0.0
    s = delay
    pts = []
    r = 1
    while s <= t_max:
        xi, eta = source.step(r, 1, rng)
        t_i = s + float(eta[0])
        if t_i <= t_max:
            pts.append(t_i)
        s += float(xi[0])
        r += 1
    return PointSet(np.sort(np.asarray(pts, dtype=float)), stationary, delay, t_max)


# ----------------------------------------------------------------------------
# frontier engine


def spawn_children(budget: np.ndarray, source, rng: np.random.Generator, delay: Optional[np.ndarray] = None):
    """Offspring of every individual in a frontier.

    ``budget[k]`` is the room ``t - position`` left for individual ``k`` and
    ``delay[k]`` an optional shift added to all of its offspring. Returns
    ``(parent, rel_pos, child_index)``: for each offspring within budget, the
    parent it belongs to, its displacement from the parent, and its birth order.
    """
    n = budget.size
    s = np.zeros(n) if delay is None else np.asarray(delay, dtype=float).copy()
    active = np.flatnonzero(s <= budget)
    parents, positions, orders = [], [], []
    r = 1
    while active.size:
        if r > _MAX_ROUNDS:
            raise CapExceededError("an individual spawned more than 10^6 offspring")
        xi, eta = source.step(r, active.size, rng)
        pos = s[active] + eta
        hit = pos <= budget[active]
        if hit.any():
            parents.append(active[hit])
            positions.append(pos[hit])
            orders.append(np.full(int(hit.sum()), r, dtype=np.int64))
        s[active] += xi
        active = active[s[active] <= budget[active]]
        r += 1
    if not parents:
        return np.empty(0, np.int64), np.empty(0), np.empty(0, np.int64)
    parent = np.concatenate(parents)
    rel = np.concatenate(positions)
    order = np.concatenate(orders)
    # group by parent, birth order within parent
    idx = np.lexsort((order, parent))
    return parent[idx], rel[idx], order[idx]


def count_children(budget: np.ndarray, source, rng: np.random.Generator, delay: Optional[np.ndarray] = None) -> np.ndarray:
    """Number of offspring within budget for each individual, without storing them."""
    n = budget.size
    s = np.zeros(n) if delay is None else np.asarray(delay, dtype=float).copy()
    counts = np.zeros(n, dtype=np.int64)
    active = np.flatnonzero(s <= budget)
    r = 1
    while active.size:
        if r > _MAX_ROUNDS:
            raise CapExceededError("an individual spawned more than 10^6 offspring")
        xi, eta = source.step(r, active.size, rng)
        counts[active] += (s[active] + eta) <= budget[active]
        s[active] += xi
        active = active[s[active] <= budget[active]]
        r += 1
    return counts


def expected_count(source, j: int, t: float) -> float:
    """Rough size ``(t/m)^j / j!`` used for the cap; ``m`` is 1 for non-iid sources."""
    m = source.m if isinstance(source, PerturbedWalkLaw) else 1.0
    return math.exp(j * math.log(max(t, 1e-300) / m) - math.lgamma(j + 1)) if t > 0 else 0.0


def check_cap(source, j: int, t: float, cap: float = POINT_CAP):
    est = expected_count(source, j, t)
    if est > cap:
        raise CapExceededError(
            f"expected generation-{j} count {est:.3g} at t={t:g} exceeds cap {cap:.3g}; use a smaller t or j"
        )


def _chunk_size(source, j: int, t: float, replicas: int) -> int:
    per = max(1.0, sum(expected_count(source, g, t) for g in range(1, j)) + expected_count(source, 1, t))
    return int(max(1, min(replicas, FRONTIER_BUDGET // per)))


@dataclass
class BranchingSample:
    """Counts of one batch of independent branching-walk replicas.

    ``counts[:, g-1]`` is ``N_g(t)`` for ``g = 1..j``; ``stationary_counts`` is
    filled when the coupled stationary tree was tracked. ``first_owner`` and
    ``first_pos`` list the first-generation points (plain tree) and
    ``first_pos_stat`` their stationary counterparts.
    """

    t: float
    counts: np.ndarray
    stationary_counts: Optional[np.ndarray] = None
    first_owner: Optional[np.ndarray] = None
    first_pos: Optional[np.ndarray] = None
    first_pos_stat: Optional[np.ndarray] = None


def simulate_branching(
    source,
    j: int,
    t: float,
    replicas: int,
    rng: np.random.Generator,
    *,
    stationary: bool = False,
    coupled: bool = False,
    keep_first: bool = False,
    cap: float = POINT_CAP,
) -> BranchingSample:
    """Simulate ``replicas`` independent trees up to generation ``j`` and budget ``t``.

    ``stationary=True`` uses stationary walks throughout. ``coupled=True``
    runs the plain and stationary trees on one shared increment stream: each
    stationary individual is its plain twin shifted right by the accumulated
    delays, so ``N̄_g(t) <= N_g(t)`` holds path by path.
    """
    if j < 1:
        raise ConfigError("generation index must be >= 1")
    if t < 0:
        raise ConfigError("t must be nonnegative")
    check_cap(source, j, t, cap)
    source = as_step_source(source)
    need_delay = stationary or coupled
    delays = delay_sampler(source) if need_delay else None

    owner = np.arange(replicas)
    budget = np.full(replicas, float(t))
    # stationary budgets of coupled twins; may go negative (twin absent)
    sbudget = budget.copy() if coupled else None
    counts = np.zeros((replicas, j), dtype=np.int64)
    scounts = np.zeros((replicas, j), dtype=np.int64) if coupled else None
    first = (None, None, None)

    for g in range(1, j + 1):
        d = delays.sample(budget.size, rng) if need_delay else None
        plain_delay = d if (stationary and not coupled) else None
        if g == j and not coupled and not (keep_first and g == 1):
            c = count_children(budget, source, rng, plain_delay)
            counts[:, g - 1] = np.bincount(owner, weights=c, minlength=replicas).astype(np.int64)
            break
        parent, rel, _ = spawn_children(budget, source, rng, plain_delay)
        child_owner = owner[parent]
        child_budget = budget[parent] - rel
        counts[:, g - 1] = np.bincount(child_owner, minlength=replicas)
        if coupled:
            child_sbudget = sbudget[parent] - d[parent] - rel
            scounts[:, g - 1] = np.bincount(child_owner[child_sbudget >= 0], minlength=replicas)
            sbudget = child_sbudget
        if g == 1 and keep_first:
            first = (child_owner, t - child_budget, (t - sbudget) if coupled else None)
        owner, budget = child_owner, child_budget

    return BranchingSample(float(t), counts, scounts, *first)


def _batch_worker(source, j, t, size, seed, index, stationary, coupled, keep_first, cap):
    return simulate_branching(
        source, j, t, size, chunk_rng(seed, index), stationary=stationary, coupled=coupled, keep_first=keep_first, cap=cap
    )


def branching_counts(
    source,
    j: int,
    t: float,
    replicas: int,
    seed: int,
    *,
    stationary: bool = False,
    coupled: bool = False,
    threads: Optional[int] = 1,
    chunk: Optional[int] = None,
    cap: float = POINT_CAP,
):
    """Replicated ``N_1..N_j(t)`` with chunked seed splitting.

    Returns ``counts`` (replicas x j) or ``(counts, stationary_counts)`` when
    ``coupled``.
    """
    source = as_step_source(source)
    check_cap(source, j, t, cap)
    size = chunk or _chunk_size(source, j, t, replicas)
    sizes = split_replicas(replicas, size)
    args = [(source, j, t, n, seed, k, stationary, coupled, False, cap) for k, n in enumerate(sizes)]
    parts = fan_out(_batch_worker, args, threads)
    counts = np.concatenate([p.counts for p in parts])
    if coupled:
        return counts, np.concatenate([p.stationary_counts for p in parts])
    return counts


def count_N_j(law, j: int, t: float, rng, stationary: bool = False) -> int:
    """One draw of ``N_j(t)`` (or ``N̄_j(t)``)."""
    rng = as_generator(rng)
    sample = simulate_branching(law, j, t, 1, rng, stationary=stationary)
    return int(sample.counts[0, j - 1])


def generation_positions(law, j: int, t_max: float, rng, stationary: bool = False) -> np.ndarray:
    """Sorted positions of all generation-``j`` individuals ``<= t_max`` in one tree.

    ``N_j(t)`` for every ``t <= t_max`` is ``searchsorted(positions, t, 'right')``
    on the same realization.
    """
    rng = as_generator(rng)
    source = as_step_source(law)
    check_cap(source, j, t_max)
    delays = delay_sampler(source) if stationary else None
    budget = np.array([float(t_max)])
    for _ in range(j):
        d = delays.sample(budget.size, rng) if stationary else None
        parent, rel, _ = spawn_children(budget, source, rng, d)
        budget = budget[parent] - rel
    return np.sort(t_max - budget)


# ----------------------------------------------------------------------------
# decomposition terms


class PowerOverFactorial:
    """``x -> x^k / (k! m^k)`` for ``x >= 0``; the uniform-law ``V_k`` when ``m = 1``."""

    def __init__(self, k: int, m: float = 1.0):
        self.k = int(k)
        self.m = float(m)
        self._log_norm = math.lgamma(self.k + 1) + self.k * math.log(self.m)

    def __call__(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        if self.k == 0:
            return np.ones_like(x)
        with np.errstate(divide="ignore"):
            return np.exp(self.k * np.log(x) - self._log_norm)


def closed_form_power(j_prev: int, m: float = 1.0) -> Callable:
    return PowerOverFactorial(j_prev, m)


@dataclass
class DecompositionSample:
    """Per-replica terms on one coupled realization.

    ``term1 = N_j(t)``, ``term2 = sum_r V_{j-1}(t - T_r)``,
    ``term3 = sum_r (t - T_r)^{j-1} / ((j-1)! m^{j-1})``.
    """

    j: int
    t: float
    term1: np.ndarray
    term2: np.ndarray
    term3: np.ndarray
    stationary: bool = False

    @property
    def centered(self) -> np.ndarray:
        return self.term1 - self.term2

    def rows(self):
        for a, b, c in zip(self.term1, self.term2, self.term3):
            yield (self.t, self.j, int(a), float(b), float(c))


def _decomposition_chunk(source, j, t, size, seed, index, stationary, v_prev, m, cap):
    rng = chunk_rng(seed, index)
    s = simulate_branching(source, j, t, size, rng, stationary=stationary, keep_first=True, cap=cap)
    rem = t - s.first_pos
    term2 = np.bincount(s.first_owner, weights=v_prev(rem), minlength=size)
    term3 = np.bincount(s.first_owner, weights=closed_form_power(j - 1, m)(rem), minlength=size)
    return s.counts[:, j - 1].astype(float), term2, term3


def decomposition_terms(
    law,
    j: int,
    t: float,
    rng=None,
    stationary: bool = False,
    *,
    replicas: int = 1,
    seed: Optional[int] = None,
    v_prev: Optional[Callable] = None,
    threads: Optional[int] = 1,
    cap: float = POINT_CAP,
) -> DecompositionSample:
    """The three terms of the branching decomposition on shared first-generation points.

    ``v_prev`` evaluates ``V_{j-1}`` (or ``V̄_{j-1}`` for stationary runs); it
    defaults to the closed form ``x^{j-1}/(j-1)!`` which is exact for the
    uniform law. Either ``rng`` (single chunk) or ``seed`` (chunked) drives
    the randomness.
    """
    if j < 1:
        raise ConfigError("generation index must be >= 1")
    source = as_step_source(law)
    m = source.m if isinstance(source, PerturbedWalkLaw) else 1.0
    if v_prev is None:
        if stationary or not (isinstance(source, PerturbedWalkLaw) and source.w is not None and source.w.is_uniform):
            if j > 1:
                raise ConfigError("v_prev is required unless the law is uniform and the walk is not stationary")
        v_prev = closed_form_power(j - 1)
    check_cap(source, j, t, cap)
    if seed is None:
        rng = as_generator(rng)
        seed = int(rng.integers(0, 2**63))
    size = _chunk_size(source, j, t, replicas)
    sizes = split_replicas(replicas, size)
    args = [(source, j, t, n, seed, k, stationary, v_prev, m, cap) for k, n in enumerate(sizes)]
    parts = fan_out(_decomposition_chunk, args, threads)
    t1 = np.concatenate([p[0] for p in parts])
    t2 = np.concatenate([p[1] for p in parts])
    t3 = np.concatenate([p[2] for p in parts])
    return DecompositionSample(j, float(t), t1, t2, t3, stationary)
