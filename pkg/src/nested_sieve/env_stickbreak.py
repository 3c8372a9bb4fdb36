"""Stick-breaking environments.

An environment is the random sequence ``P_r = W_1 ... W_{r-1} (1 - W_r)``.
Three families of factors are supported:

* case A: ``W_r`` iid from a :class:`WLaw` (uniform or beta),
* case B: ``W_r ~ Beta(alpha * r, 1)``,
* case C: ``W_r ~ Beta(theta + alpha * r, 1 - alpha)``, i.e. GEM(alpha, theta).

:class:`FixedProbabilities` is a deterministic finite environment used by the
brute-force enumeration checks.

All samplers work with the pair ``(log W, log(1 - W))`` so that consumers can
stay in log space; the positions of the additive branching walk are exactly
``xi = -log W`` and ``eta = -log(1 - W)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import stats

from .errors import ConfigError, StreamExhausted
from .seeding import as_generator

logger = logging.getLogger(__name__)

UNDERFLOW = 1e-300
_MAX_RESAMPLE_ROUNDS = 64


def _log_gamma_variates(shape: float, size: int, rng: np.random.Generator) -> np.ndarray:
    # log of Gamma(shape, 1) variates; the boost G(a) = G(a+1) U^(1/a) avoids
    # underflow of tiny gamma draws when shape < 1
    if shape >= 1.0:
        return np.log(rng.standard_gamma(shape, size))
    g = rng.standard_gamma(shape + 1.0, size)
    u = rng.random(size)
    with np.errstate(divide="ignore"):
        return np.log(g) + np.log(u) / shape


def _log_beta_pair(a: float, b: float, size: int, rng: np.random.Generator):
    """(log W, log(1-W)) for W ~ Beta(a, b)."""
    if b == 1.0:
        # inverse CDF of Beta(a, 1): W = U^(1/a)
        with np.errstate(divide="ignore"):
            logw = np.log(rng.random(size)) / a
            return logw, np.log(-np.expm1(logw))
    if a == 1.0:
        with np.errstate(divide="ignore"):
            log1mw = np.log(rng.random(size)) / b
            return np.log(-np.expm1(log1mw)), log1mw
    lx = _log_gamma_variates(a, size, rng)
    ly = _log_gamma_variates(b, size, rng)
    tot = np.logaddexp(lx, ly)
    return lx - tot, ly - tot


def _finite_pair(draw, size: int, rng: np.random.Generator):
    """Call ``draw(size, rng)`` and redraw entries where W hit 0 or 1."""
    logw, log1mw = draw(size, rng)
    bad = ~(np.isfinite(logw) & np.isfinite(log1mw) & (logw < 0) & (log1mw < 0))
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > _MAX_RESAMPLE_ROUNDS:
            raise ConfigError("stick-breaking factor keeps hitting the boundary; parameters are degenerate")
        idx = np.flatnonzero(bad)
        logger.debug("resampling %d boundary stick-breaking draws", idx.size)
        lw, l1 = draw(idx.size, rng)
        logw[idx] = lw
        log1mw[idx] = l1
        bad = ~(np.isfinite(logw) & np.isfinite(log1mw) & (logw < 0) & (log1mw < 0))
    return logw, log1mw


@dataclass(frozen=True)
class WLaw:
    """Law of a single stick-breaking factor: ``uniform`` or ``beta(a, b)``."""

    kind: str = "uniform"
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "beta"):
            raise ConfigError(f"unknown W law {self.kind!r}")
        if self.kind == "uniform" and (self.a != 1.0 or self.b != 1.0):
            raise ConfigError("uniform W law takes no parameters")
        if not (self.a > 0 and self.b > 0 and math.isfinite(self.a) and math.isfinite(self.b)):
            raise ConfigError(f"beta parameters must be positive, got a={self.a}, b={self.b}")

    @classmethod
    def uniform(cls) -> "WLaw":
        return cls("uniform")

    @classmethod
    def beta(cls, a: float, b: float) -> "WLaw":
        return cls("beta", float(a), float(b))

    @property
    def is_uniform(self) -> bool:
        return self.kind == "uniform" or (self.a == 1.0 and self.b == 1.0)

    def log_pair(self, size: int, rng: np.random.Generator):
        if self.is_uniform:
            return _finite_pair(_uniform_pair, size, rng)
        return _finite_pair(lambda k, g: _log_beta_pair(self.a, self.b, k, g), size, rng)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return np.exp(self.log_pair(size, rng)[0])

    def pdf(self, w):
        return stats.beta.pdf(w, self.a, self.b)

    def cdf(self, w):
        return stats.beta.cdf(w, self.a, self.b)

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)

    def to_config(self):
        if self.is_uniform:
            return "uniform"
        return {"beta": [self.a, self.b]}


def _uniform_pair(size: int, rng: np.random.Generator):
    u = rng.random(size)
    with np.errstate(divide="ignore"):
        return np.log(u), np.log1p(-u)


@dataclass(frozen=True)
class CaseA:
    """iid factors ``W_r`` with law ``w``."""

    w: WLaw = field(default_factory=WLaw.uniform)

    iid = True

    def log_pair(self, r: int, size: int, rng: np.random.Generator):
        return self.w.log_pair(size, rng)

    def to_config(self):
        return {"case": "A", "w": self.w.to_config()}


@dataclass(frozen=True)
class CaseB:
    """``W_r ~ Beta(alpha r, 1)``."""

    alpha: float

    iid = False

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"case B requires alpha > 0, got {self.alpha}")

    def log_pair(self, r: int, size: int, rng: np.random.Generator):
        a = self.alpha * r
        return _finite_pair(lambda k, g: _log_beta_pair(a, 1.0, k, g), size, rng)

    def to_config(self):
        return {"case": "B", "alpha": self.alpha}


@dataclass(frozen=True)
class CaseC:
    """GEM(alpha, theta): ``W_r ~ Beta(theta + alpha r, 1 - alpha)``."""

    alpha: float
    theta: float

    iid = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"case C requires alpha in (0, 1), got {self.alpha}")
        if not (self.theta > -self.alpha and math.isfinite(self.theta)):
            raise ConfigError(f"case C requires theta > -alpha, got theta={self.theta}")

    def log_pair(self, r: int, size: int, rng: np.random.Generator):
        a = self.theta + self.alpha * r
        b = 1.0 - self.alpha
        return _finite_pair(lambda k, g: _log_beta_pair(a, b, k, g), size, rng)

    def to_config(self):
        return {"case": "C", "alpha": self.alpha, "theta": self.theta}


@dataclass(frozen=True)
class FixedProbabilities:
    """Deterministic finite environment ``(p_1, ..., p_k)`` reused at every node.

    Expressed as stick-breaking with ``W_r = 1 - p_r / residual_{r-1}`` and
    ``W_k = 0``; only meant for exact enumeration checks.
    """

    probs: tuple

    iid = False

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError("fixed probabilities must be positive and sum to 1")
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    def log_pair(self, r: int, size: int, rng: np.random.Generator):
        k = len(self.probs)
        if r > k:
            raise ConfigError("fixed environment has no box beyond its last entry")
        residual_before = 1.0 - sum(self.probs[: r - 1])
        if r == k:
            logw, log1mw = -np.inf, 0.0
        else:
            q = self.probs[r - 1] / residual_before
            logw, log1mw = math.log1p(-q), math.log(q)
        return np.full(size, logw), np.full(size, log1mw)

    def to_config(self):
        return {"case": "fixed", "probs": list(self.probs)}


EnvironmentCase = Union[CaseA, CaseB, CaseC, FixedProbabilities]

GEM01 = CaseA(WLaw.uniform())


def parse_w_law(value) -> WLaw:
    if value is None or value == "uniform":
        return WLaw.uniform()
    if isinstance(value, dict):
        if "beta" in value:
            a, b = value["beta"]
            return WLaw.beta(a, b)
        if value.get("kind") == "beta":
            return WLaw.beta(value["a"], value["b"])
        if value.get("kind") == "uniform":
            return WLaw.uniform()
    raise ConfigError(f"cannot parse W law {value!r}")


def environment_from_config(cfg) -> EnvironmentCase:
    """Build an environment from its JSON form.

    Accepted shapes: ``{"case": "A", "w": "uniform"}``,
    ``{"case": "A", "w": {"beta": [a, b]}}``, ``{"case": "B", "alpha": ...}``,
    ``{"case": "C", "alpha": ..., "theta": ...}``, ``{"case": "fixed", "probs": [...]}``
    and the shorthand string ``"gem01"``.
    """
    if cfg == "gem01" or cfg == "uniform":
        return GEM01
    if not isinstance(cfg, dict) or "case" not in cfg:
        raise ConfigError(f"environment must be an object with a 'case' key, got {cfg!r}")
    case = str(cfg["case"]).upper()
    try:
        if case == "A":
            return CaseA(parse_w_law(cfg.get("w", "uniform")))
        if case == "B":
            return CaseB(float(cfg["alpha"]))
        if case == "C":
            return CaseC(float(cfg["alpha"]), float(cfg["theta"]))
        if case == "FIXED":
            return FixedProbabilities(tuple(cfg["probs"]))
    except KeyError as exc:
        raise ConfigError(f"environment case {case} is missing parameter {exc}") from None
    raise ConfigError(f"unknown environment case {cfg['case']!r}")


def sample_w(case: EnvironmentCase, r: int, rng) -> float:
    """One draw of the stick-breaking factor ``W_r``, strictly inside (0, 1)."""
    if r < 1:
        raise ConfigError("factor index r must be positive")
    rng = as_generator(rng)
    while True:
        logw, _ = case.log_pair(r, 1, rng)
        w = math.exp(float(logw[0]))
        if 0.0 < w < 1.0:
            return w
        if isinstance(case, FixedProbabilities):
            return w
        logger.debug("resampling W_%d = %r", r, w)


class ProbabilityStream:
    """Lazy generator of ``P_1, P_2, ...`` with the leftover stick tracked.

    >>> s = ProbabilityStream(GEM01, np.random.default_rng(1))
    >>> p, rest = s.next_probability()
    """

    def __init__(self, case: EnvironmentCase, rng=None):
        self.case = case
        self.rng = as_generator(rng)
        self.index = 1
        self.residual = 1.0
        self.total = 0.0

    def next_probability(self) -> tuple[float, float]:
        if self.residual < UNDERFLOW:
            raise StreamExhausted(f"residual {self.residual:.3g} below {UNDERFLOW:g} after {self.index - 1} draws")
        w = sample_w(self.case, self.index, self.rng)
        return self.advance(w)

    def advance(self, w: float) -> tuple[float, float]:
        """Consume a given factor ``w``; exposed for deterministic checks."""
        before = self.residual
        p = before * (1.0 - w)
        self.residual = before * w
        self.total += p
        self.index += 1
        return p, self.residual

    def take(self, count: int) -> np.ndarray:
        return np.array([self.next_probability()[0] for _ in range(count)])

    def __iter__(self):
        return self

    def __next__(self) -> float:
        try:
            return self.next_probability()[0]
        except StreamExhausted:
            raise StopIteration from None


def next_probability(stream: ProbabilityStream) -> tuple[float, float]:
    return stream.next_probability()

