"""Nested occupancy scheme: balls cascading through a stick-breaking box tree.

Each occupied box draws a fresh environment ``(P_r)`` for its children and
splits its balls by sequential binomial thinning: child ``r`` receives
``Binomial(m_{r-1}, 1 - W_r)`` of the ``m_{r-1}`` balls that skipped children
``1..r-1``. This reproduces the multinomial split exactly, needs one draw per
nonempty child only, and never touches the (infinitely many) empty boxes.

The same expansion also tracks boxes by weight. A node is expanded for as long
as it still holds balls or its leftover stick ``P(v) W_1 ... W_r`` stays above
``1/t``; the latter gives the threshold counts ``rho_j(t)``.

Generations are processed breadth first and all replicas of a batch share one
frontier, tagged by an ``owner`` array, so memory is bounded by the largest
generation rather than by the whole tree.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env_stickbreak import CaseA, EnvironmentCase
from .errors import CapExceededError, ConfigError, DomainError
from .seeding import as_generator, chunk_rng, fan_out, split_replicas

logger = logging.getLogger(__name__)

MAX_CHILDREN = 10**6
FRONTIER_BUDGET = 2_000_000
RHO_CAP = 10**7


@dataclass
class OccupiedBox:
    j: int
    log_weight: float
    balls: int


@dataclass
class GenerationStats:
    j: int
    K: int
    hist: dict
    total_balls: int
    weight_list: Optional[list] = None
    rho: Optional[int] = None

    def check(self, n: int):
        if sum(self.hist.values()) != self.K:
            raise AssertionError("histogram does not sum to K")
        if sum(r * k for r, k in self.hist.items()) != n:
            raise AssertionError("balls not conserved")

    def to_record(self, n: int, seed) -> dict:
        rec = {"n": n, "seed": seed, "j": self.j, "K": self.K, "hist": {str(r): k for r, k in sorted(self.hist.items())}}
        if self.rho is not None:
            rec["rho"] = self.rho
        return rec


@dataclass
class OccupancyRun:
    n: int
    env: EnvironmentCase
    J: int
    stats: list = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def K(self) -> list:
        return [s.K for s in self.stats]

    def records(self) -> list:
        return [s.to_record(self.n, self.seed) for s in self.stats]

    def to_json(self) -> str:
        return json.dumps(
            {"n": self.n, "seed": self.seed, "env": self.env.to_config(), "generations": self.records()},
            sort_keys=True,
        )


def _check_balls(n) -> int:
    if isinstance(n, bool):
        raise ConfigError("ball count must be an integer")
    if isinstance(n, float):
        if not n.is_integer():
            raise ConfigError(f"ball count must be an integer, got {n}")
        n = int(n)
    n = int(n)
    if n < 1:
        raise ConfigError("ball count must be >= 1")
    if n > 2**63 - 1:
        raise ConfigError("ball count exceeds 64-bit range")
    return n


# ----------------------------------------------------------------------------
# single box


def allocate_children(m: int, env: EnvironmentCase, rng) -> list:
    """Split ``m`` balls among the children of one box.

    Returns ``(r, balls_r, log P_r)`` for the nonempty children, in order.
    """
    m = _check_balls(m)
    rng = as_generator(rng)
    out = []
    remaining = m
    log_res = 0.0
    r = 0
    while remaining > 0:
        r += 1
        if r > MAX_CHILDREN:
            raise CapExceededError(f"box needed more than {MAX_CHILDREN} children to place {m} balls")
        logw, log1mw = env.log_pair(r, 1, rng)
        lw, l1 = float(logw[0]), float(log1mw[0])
        k = int(rng.binomial(remaining, math.exp(l1)))
        if k:
            out.append((r, k, log_res + l1))
            remaining -= k
        log_res += lw
    return out


# ----------------------------------------------------------------------------
# frontier engine


@dataclass
class _Frontier:
    balls: np.ndarray  # int64
    logw: np.ndarray  # log P(v)
    owner: np.ndarray  # replica index

    @property
    def size(self) -> int:
        return self.balls.size


def _expand(front: _Frontier, env: EnvironmentCase, rng: np.random.Generator, cut: Optional[float]) -> _Frontier:
    """All children of the frontier that hold balls or (if ``cut``) have log weight >= cut."""
    remaining = front.balls.copy()
    log_res = front.logw.copy()  # log of P(v) W_1 ... W_r
    idx = np.arange(front.size)
    parts_b, parts_w, parts_o = [], [], []
    r = 0
    while idx.size:
        r += 1
        if r > MAX_CHILDREN:
            raise CapExceededError(f"a box needed more than {MAX_CHILDREN} children")
        logw, log1mw = env.log_pair(r, idx.size, rng)
        rem = remaining[idx]
        got = rng.binomial(rem, np.exp(log1mw))
        child_w = log_res[idx] + log1mw
        keep = got > 0
        if cut is not None:
            keep |= child_w >= cut
        if keep.any():
            parts_b.append(got[keep])
            parts_w.append(child_w[keep])
            parts_o.append(front.owner[idx[keep]])
        remaining[idx] = rem - got
        log_res[idx] += logw
        alive = remaining[idx] > 0
        if cut is not None:
            alive |= log_res[idx] >= cut
        idx = idx[alive]
    if not parts_b:
        empty = np.empty(0)
        return _Frontier(empty.astype(np.int64), empty, empty.astype(np.int64))
    return _Frontier(np.concatenate(parts_b), np.concatenate(parts_w), np.concatenate(parts_o))


def _cut_for(t: Optional[float]) -> Optional[float]:
    if t is None:
        return None
    if not t > 1:
        raise DomainError(f"threshold t must exceed 1, got {t}")
    return -math.log(t)


def run_occupancy(
    n: int,
    env: EnvironmentCase,
    J: int,
    rng,
    *,
    keep_weights: bool = False,
    rho_t: Optional[float] = None,
    seed: Optional[int] = None,
) -> OccupancyRun:
    """Throw ``n`` balls into the nested scheme and record generations ``1..J``.

    With ``rho_t`` the same environment is also explored down to weight
    ``1/rho_t`` and each generation reports ``rho`` as well.
    """
    n = _check_balls(n)
    if J < 1:
        raise ConfigError("J must be >= 1")
    if seed is not None and rng is None:
        rng = seed
    rng = as_generator(rng)
    cut = _cut_for(rho_t)
    front = _Frontier(np.array([n], dtype=np.int64), np.zeros(1), np.zeros(1, dtype=np.int64))
    run = OccupancyRun(n, env, J, seed=seed)
    for j in range(1, J + 1):
        front = _expand(front, env, rng, cut)
        occ = front.balls > 0
        vals, cnts = np.unique(front.balls[occ], return_counts=True)
        stats = GenerationStats(
            j=j,
            K=int(occ.sum()),
            hist={int(v): int(c) for v, c in zip(vals, cnts)},
            total_balls=int(front.balls.sum()),
            weight_list=front.logw[occ].tolist() if keep_weights else None,
            rho=int(np.count_nonzero(front.logw >= cut)) if cut is not None else None,
        )
        run.stats.append(stats)
    return run


def _expected_boxes(env: EnvironmentCase, J: int, log_scale: float) -> float:
    m = 1.0
    if isinstance(env, CaseA):
        from .renewal_calc import law_constants

        m = law_constants(env).m
    x = max(log_scale, 1.0) / m
    return max(math.exp(j * math.log(x) - math.lgamma(j + 1)) for j in range(1, J + 1)) + 1.0


def _occupancy_batch(n, env, J, size, seed, index, rho_t):
    rng = chunk_rng(seed, index)
    cut = _cut_for(rho_t)
    front = _Frontier(np.full(size, n, dtype=np.int64), np.zeros(size), np.arange(size, dtype=np.int64))
    K = np.zeros((size, J), dtype=np.int64)
    rho = np.zeros((size, J), dtype=np.int64) if cut is not None else None
    for j in range(J):
        front = _expand(front, env, rng, cut)
        K[:, j] = np.bincount(front.owner[front.balls > 0], minlength=size)
        if rho is not None:
            rho[:, j] = np.bincount(front.owner[front.logw >= cut], minlength=size)
    return K, rho


def occupancy_counts(
    n: int,
    env: EnvironmentCase,
    J: int,
    replicas: int,
    seed: int,
    *,
    rho_t: Optional[float] = None,
    threads: Optional[int] = 1,
    chunk: Optional[int] = None,
):
    """``K_n(1..J)`` for ``replicas`` independent runs (matrix ``replicas x J``).

    With ``rho_t`` returns ``(K, rho)``, both computed on the same environments.
    """
    n = _check_balls(n)
    if J < 1:
        raise ConfigError("J must be >= 1")
    scale = math.log(max(n, rho_t or 1.0))
    per = min(float(n) * J, _expected_boxes(env, J, scale) * 2)
    size = chunk or int(max(1, min(replicas, FRONTIER_BUDGET // per)))
    sizes = split_replicas(replicas, size)
    parts = fan_out(_occupancy_batch, [(n, env, J, s, seed, k, rho_t) for k, s in enumerate(sizes)], threads)
    K = np.concatenate([p[0] for p in parts])
    if rho_t is None:
        return K
    return K, np.concatenate([p[1] for p in parts])


# ----------------------------------------------------------------------------
# statistics


def ceil_power(n: int, e: float) -> int:
    """``ceil(n ** e)`` without floating noise at exact integer values."""
    if e == 0:
        return 1
    if e == 1:
        return int(n)
    x = float(n) ** e
    near = round(x)
    if abs(x - near) <= 1e-9 * max(1.0, x):
        return int(near)
    return math.ceil(x)


def k_n_s(stats: GenerationStats, n: int, s: float) -> int:
    """Number of boxes in the generation holding at least ``ceil(n^{1-s})`` balls."""
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"s must lie in [0, 1], got {s}")
    lo = ceil_power(n, 1.0 - s)
    return sum(k for r, k in stats.hist.items() if r >= lo)


def _rho_batch(env, j, t, size, seed, index):
    rng = chunk_rng(seed, index)
    cut = -math.log(t)
    front = _Frontier(np.zeros(size, dtype=np.int64), np.zeros(size), np.arange(size, dtype=np.int64))
    out = np.zeros((size, j), dtype=np.int64)
    for g in range(j):
        front = _expand(front, env, rng, cut)
        out[:, g] = np.bincount(front.owner, minlength=size)
    return out


def _check_rho(env, j, t, cap):
    if j < 1:
        raise ConfigError("generation j must be >= 1")
    _cut_for(t)
    est = _expected_boxes(env, j, math.log(t)) - 1.0
    if est > cap:
        raise CapExceededError(
            f"expected rho_{j}({t:g}) about {est:.3g} exceeds cap {cap:.3g}; use a smaller t or j"
        )
    return est


def rho_counts(
    env: EnvironmentCase,
    j: int,
    t: float,
    replicas: int,
    seed: int,
    *,
    threads: Optional[int] = 1,
    cap: float = RHO_CAP,
) -> np.ndarray:
    """``rho_1(t) .. rho_j(t)`` for independent environments (matrix ``replicas x j``)."""
    est = _check_rho(env, j, t, cap)
    size = int(max(1, min(replicas, FRONTIER_BUDGET // max(1.0, 2 * est))))
    sizes = split_replicas(replicas, size)
    parts = fan_out(_rho_batch, [(env, j, t, s, seed, k) for k, s in enumerate(sizes)], threads)
    return np.concatenate(parts)


def rho_j(env: EnvironmentCase, j: int, t: float, rng, cap: float = RHO_CAP) -> int:
    """Number of generation-``j`` boxes of weight at least ``1/t`` in one environment."""
    _check_rho(env, j, t, cap)
    rng = as_generator(rng)
    cut = -math.log(t)
    front = _Frontier(np.zeros(1, dtype=np.int64), np.zeros(1), np.zeros(1, dtype=np.int64))
    for _ in range(j):
        front = _expand(front, env, rng, cut)
    return int(front.size)


# ----------------------------------------------------------------------------
# exact means for the uniform environment


def uniform_mean_K(n: int, J: int) -> np.ndarray:
    """Exact ``E K_n(1..J)`` for uniform stick-breaking.

    The first generation is an Ewens(1) partition, whose expected number of
    blocks of size ``b`` is ``1/b``; each block restarts the scheme. Hence
    ``E K_n(1) = H_n`` and ``E K_n(j) = sum_{b<=n} E K_b(j-1) / b``.
    """
    n = _check_balls(n)
    if n > 5 * 10**7:
        raise ConfigError("exact mean recursion is limited to n <= 5e7")
    inv = 1.0 / np.arange(1, n + 1)
    cur = np.cumsum(inv)
    out = [cur[-1]]
    for _ in range(1, J):
        cur = np.cumsum(cur * inv)
        out.append(cur[-1])
    return np.array(out)


# ----------------------------------------------------------------------------
# export


def k_matrix_csv(K: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replica"] + [f"K_{j + 1}" for j in range(K.shape[1])])
    for i, row in enumerate(K):
        w.writerow([i] + [int(x) for x in row])
    return buf.getvalue()
