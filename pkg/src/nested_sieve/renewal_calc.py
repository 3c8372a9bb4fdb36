"""Renewal functions of the perturbed walk on a uniform grid.

Tabulates

* ``U(t) = sum_i P{S_i <= t}`` from ``U = 1 + F * U``,
* ``V(t) = E U((t - eta)^+)`` (Stieltjes integral of ``U`` against ``dG``),
* ``Vbar(t) = m^{-1} int_0^t G(y) dy`` for the stationary walk,
* ``V_j = V_{j-1} * dV`` and ``Vbar_j = Vbar_{j-1} * dVbar``,

together with the explicit two-term bounds and a few closed-form helpers.

Every Stieltjes integral ``int_[0,t] f(t-y) dmu(y)`` is discretized cell by
cell: the increment of ``mu`` over ``(t_{i-1}, t_i]`` multiplies the average
of ``f`` at the two cell ends, an estimate of ``f`` at the cell midpoint.
This keeps outputs monotone and is second-order accurate for smooth laws.
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
from scipy import integrate
from scipy.special import gammaln, logsumexp

from .env_stickbreak import CaseA, WLaw
from .errors import ConfigError, DomainError
from .prw_branching import PerturbedWalkLaw

logger = logging.getLogger(__name__)

LOG_SPACE_FROM = 30


@dataclass(frozen=True)
class Grid:
    h: float = 0.01
    t_max: float = 100.0

    def __post_init__(self):
        if not (self.h > 0 and self.t_max > 0):
            raise ConfigError("grid step and t_max must be positive")
        n = self.t_max / self.h
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError(f"t_max={self.t_max} is not a multiple of h={self.h}")

    @property
    def count(self) -> int:
        return int(round(self.t_max / self.h)) + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.h * np.arange(self.count)


@dataclass(frozen=True)
class LawConstants:
    m: float
    s2: float
    mu: float
    sigma2: float
    c0: float
    c: float
    cbar: float
    eta_mean: float

    def as_dict(self):
        return {k: getattr(self, k) for k in ("m", "s2", "mu", "sigma2", "c0", "c", "cbar", "eta_mean")}


def _quad(f, a, b, what):
    val, err = integrate.quad(f, a, b, limit=400, epsabs=1e-13, epsrel=1e-11)
    if not math.isfinite(val) or err > 1e-6 * max(1.0, abs(val)):
        raise ConfigError(f"moment integral for {what} does not converge (value {val}, error {err})")
    return val


def law_constants(source) -> LawConstants:
    """Constants ``(m, s2, mu, sigma2, c, cbar)`` of a W-derived law.

    Moments come from numeric integration against the density of ``W``:
    ``mu = E|log W|``, ``sigma2 = Var log W``, ``E|log(1 - W)|``. Then
    ``m = mu``, ``s2 = sigma2``, ``c0 = s2 / E xi^2``, ``c = max(c0, E eta / m)``
    and ``cbar = E eta / m``.
    """
    if isinstance(source, CaseA):
        w = source.w
    elif isinstance(source, PerturbedWalkLaw):
        if source.w is None:
            return _constants_from_moments(source.m, source.s2, source.eta_mean)
        w = source.w
    elif isinstance(source, WLaw):
        w = source
    else:
        raise ConfigError("law constants need an iid stick-breaking factor (case A)")
    log_norm = math.lgamma(w.a) + math.lgamma(w.b) - math.lgamma(w.a + w.b)

    def dens(x):
        return math.exp((w.a - 1) * math.log(x) + (w.b - 1) * math.log1p(-x) - log_norm)

    # split at 1/2 so both endpoint singularities are handled separately
    def moment(g, what):
        return _quad(lambda x: g(x) * dens(x), 0.0, 0.5, what) + _quad(lambda x: g(x) * dens(x), 0.5, 1.0, what)

    mu = moment(lambda x: -math.log(x), "E|log W|")
    second = moment(lambda x: math.log(x) ** 2, "E (log W)^2")
    eta_mean = moment(lambda x: -math.log1p(-x), "E|log(1-W)|")
    sigma2 = second - mu * mu
    return _constants_from_moments(mu, sigma2, eta_mean)


def _constants_from_moments(m, s2, eta_mean) -> LawConstants:
    c0 = s2 / (s2 + m * m)
    cbar = eta_mean / m
    return LawConstants(m, s2, m, s2, c0, max(c0, cbar), cbar, eta_mean)


def _stieltjes(f: np.ndarray, dmu: np.ndarray, atom: float = 0.0) -> np.ndarray:
    """``out_k = atom f_k + sum_{i=1}^k dmu_i (f_{k-i} + f_{k-i+1}) / 2``.

    ``dmu[i-1]`` is the mass of cell ``(t_{i-1}, t_i]``.
    """
    n = f.size
    d = np.concatenate(([0.0], dmu[: n - 1]))
    a = np.convolve(d, f)[:n]  # sum_i d_i f_{k-i}
    # sum_i d_i f_{k-i+1} = sum_i d_i shifted by one
    b = np.convolve(d, np.concatenate((f[1:], [0.0])))[:n]
    b[0] = 0.0
    return atom * f + 0.5 * (a + b)


def _cell_masses(cdf_values: np.ndarray) -> np.ndarray:
    return np.maximum(np.diff(cdf_values), 0.0)


def compute_U(law: PerturbedWalkLaw, grid: Grid, meta: Optional[dict] = None) -> np.ndarray:
    """Renewal function by forward substitution of the discretized equation."""
    t = grid.nodes
    F = np.asarray(law.xi_cdf(t), dtype=float)
    atom = float(F[0])
    dF = _cell_masses(F)
    if F[-1] < 0.999:
        msg = f"increment CDF reaches only {F[-1]:.4f} by t_max={grid.t_max}"
        logger.warning(msg)
        if meta is not None:
            meta.setdefault("warnings", []).append(msg)
    n = t.size
    U = np.empty(n)
    denom0 = 1.0 - atom
    if denom0 <= 0:
        raise ConfigError("increment law has an atom of mass 1 at zero")
    U[0] = 1.0 / denom0
    half1 = 0.5 * dF[0]
    denom = denom0 - half1
    rev_dF = dF[::-1]
    for k in range(1, n):
        # cells i = 1..k; cell i couples U_{k-i} and U_{k-i+1}
        w = rev_dF[n - 1 - k :]  # dF_k, ..., dF_1 (dF_i at position k-i)
        s = 0.5 * np.dot(w, U[:k])  # sum_i dF_i U_{k-i}
        s += 0.5 * np.dot(w[:-1], U[1:k])  # sum_{i>=2} dF_i U_{k-i+1}
        U[k] = (1.0 + s) / denom
    return U


def compute_V_and_Vbar(law: PerturbedWalkLaw, grid: Grid, U: np.ndarray):
    t = grid.nodes
    G = np.asarray(law.eta_cdf(t), dtype=float)
    V = _stieltjes(U, _cell_masses(G), atom=float(G[0]))
    Vbar = integrate.cumulative_trapezoid(G, t, initial=0.0) / law.m
    return np.maximum.accumulate(V), np.maximum.accumulate(Vbar)


class TableFunction:
    """Piecewise-linear interpolant of a tabulated function; picklable for worker pools."""

    def __init__(self, nodes: np.ndarray, values: np.ndarray, left: float = 0.0):
        self.nodes = nodes
        self.values = values
        self.left = left

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x > self.nodes[-1] * (1 + 1e-12)):
            raise DomainError("renewal table evaluated beyond t_max")
        return np.interp(x, self.nodes, self.values, left=self.left)


@dataclass
class RenewalTable:
    grid: Grid
    law: PerturbedWalkLaw
    constants: LawConstants
    U: np.ndarray
    V: np.ndarray
    Vbar: np.ndarray
    Vj: dict = field(default_factory=dict)
    Vbarj: dict = field(default_factory=dict)
    log_Vj: dict = field(default_factory=dict)
    log_Vbarj: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    def V_of(self, j: int, stationary: bool = False) -> np.ndarray:
        if j == 0:
            return np.ones(self.grid.count)
        table, logs = (self.Vbarj, self.log_Vbarj) if stationary else (self.Vj, self.log_Vj)
        if j in table:
            return table[j]
        if j in logs:
            raise DomainError(f"V_{j} is stored in log space only; use log_V_of")
        raise KeyError(f"V_{j} not computed; call convolve_Vj with j_max >= {j}")

    def log_V_of(self, j: int, stationary: bool = False) -> np.ndarray:
        table, logs = (self.Vbarj, self.log_Vbarj) if stationary else (self.Vj, self.log_Vj)
        if j in logs:
            return logs[j]
        with np.errstate(divide="ignore"):
            return np.log(self.V_of(j, stationary))

    def interpolator(self, j: int, stationary: bool = False) -> "TableFunction":
        """Callable evaluating ``V_j`` (or ``Vbar_j``) at arbitrary points in ``[0, t_max]``."""
        return TableFunction(self.t, self.V_of(j, stationary), 1.0 if j == 0 else 0.0)

    def to_csv(self, j_max: Optional[int] = None) -> str:
        js = sorted(k for k in self.Vj if k >= 2 and (j_max is None or k <= j_max))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "U", "V", "Vbar"] + [f"V_{k}" for k in js])
        cols = [self.t, self.U, self.V, self.Vbar] + [self.Vj[k] for k in js]
        for row in zip(*cols):
            w.writerow([f"{x:.12g}" for x in row])
        return buf.getvalue()

    def constants_json(self) -> str:
        d = self.constants.as_dict()
        d.update({"h": self.grid.h, "t_max": self.grid.t_max, "law": self.law.name})
        if self.meta.get("warnings"):
            d["warnings"] = self.meta["warnings"]
        return json.dumps(d, indent=2, sort_keys=True)


def _convolve_chain(base: np.ndarray, step_mass: np.ndarray, j_max: int, table: dict, logs: dict):
    prev = base
    log_scale = 0.0
    table[1] = base
    for j in range(2, j_max + 1):
        cur = _stieltjes(prev, step_mass)
        cur = np.maximum.accumulate(cur)
        top = cur.max()
        if j > LOG_SPACE_FROM or (top > 0 and log_scale + math.log(top) > 700):
            # rescale to keep the running product finite; values kept as logs
            if top > 0:
                cur = cur / top
                log_scale += math.log(top)
            with np.errstate(divide="ignore"):
                logs[j] = np.log(cur) + log_scale
        else:
            table[j] = cur * math.exp(log_scale) if log_scale else cur
        prev = cur


def convolve_Vj(table: RenewalTable, j_max: int) -> RenewalTable:
    """Fill ``Vj`` and ``Vbarj`` for ``j = 1..j_max`` by iterated convolution.

    Above ``j = 30`` (or once values near overflow) results are stored in
    ``log_Vj`` / ``log_Vbarj`` only.
    """
    if j_max < 1:
        raise ConfigError("j_max must be >= 1")
    _convolve_chain(table.V, _cell_masses(table.V), j_max, table.Vj, table.log_Vj)
    _convolve_chain(table.Vbar, _cell_masses(table.Vbar), j_max, table.Vbarj, table.log_Vbarj)
    return table


def renewal_table(law: PerturbedWalkLaw, grid: Grid = Grid(), j_max: int = 1) -> RenewalTable:
    meta: dict = {}
    U = compute_U(law, grid, meta)
    V, Vbar = compute_V_and_Vbar(law, grid, U)
    table = RenewalTable(grid, law, law_constants(law), U, V, Vbar, meta=meta)
    convolve_Vj(table, j_max)
    return table


# ----------------------------------------------------------------------------
# bounds and closed forms


def lorden_check(table: RenewalTable, c0: Optional[float] = None) -> dict:
    """Compare ``U(t) - t/m`` with the constant ``c0`` at every node.

    Violations are reported, not raised.
    """
    c0 = table.constants.c0 if c0 is None else c0
    excess = table.U - table.t / table.law.m
    worst = float(excess.max())
    bad = int(np.count_nonzero(excess > c0 + 1e-9))
    if bad:
        logger.warning("U(t) - t/m reaches %.6g above c0=%.6g at %d nodes", worst, c0, bad)
    return {"c0": c0, "max_excess": worst, "violations": bad, "holds": bad == 0}


def _log_binomial_terms(j: int, t: float, c: float, m: float) -> np.ndarray:
    i = np.arange(j, dtype=float)
    if t <= 0:
        # only the i = 0 term survives
        return np.array([j * math.log(c)] + [-np.inf] * (j - 1))
    return (
        gammaln(j + 1) - gammaln(i + 1) - gammaln(j - i + 1)
        + (j - i) * math.log(c) + i * math.log(t) - gammaln(i + 1) - i * math.log(m)
    )


def binomial_bound(j: int, t, c: float, m: float):
    """``sum_{i<j} C(j,i) c^{j-i} t^i / (i! m^i)``, vectorized over ``t``."""
    if j < 1:
        raise DomainError("j must be >= 1")
    t = np.asarray(t, dtype=float)
    flat = np.atleast_1d(t)
    out = np.array([math.exp(logsumexp(_log_binomial_terms(j, x, c, m))) for x in flat])
    return out.reshape(t.shape) if t.ndim else float(out[0])


@dataclass(frozen=True)
class PowerBounds:
    full_sum: float
    simplified: float
    applicable: bool


def power_bounds(j: int, t: float, c: float, m: float) -> PowerBounds:
    """Binomial-sum bound on ``|V_j(t) - t^j/(j! m^j)|`` and its simplification.

    The simplified bound ``2 c j t^{j-1} / ((j-1)! m^{j-1})`` is only valid for
    ``j <= sqrt(t / (2 c m))``; ``applicable`` reports that precondition.
    """
    if j < 1 or t <= 0 or c <= 0 or m <= 0:
        raise DomainError("need j >= 1 and positive t, c, m")
    full = binomial_bound(j, t, c, m)
    simplified = math.exp(math.log(2 * c * j) + (j - 1) * math.log(t / m) - math.lgamma(j))
    return PowerBounds(full, simplified, j <= math.sqrt(t / (2 * c * m)))


def power_over_factorial(t, j: int, m: float = 1.0):
    """``t^j / (j! m^j)`` evaluated through logs."""
    t = np.asarray(t, dtype=float)
    if j == 0:
        return np.ones_like(t)
    with np.errstate(divide="ignore"):
        return np.exp(j * np.log(t / m) - math.lgamma(j + 1))


def erlang_tail(k: int, x: float) -> float:
    """``e^{-x} sum_{i<k} x^i / i!``, the tail of the Gamma(k, 1) law at ``x``."""
    if k < 1:
        raise DomainError("k must be >= 1")
    if x < 0:
        raise DomainError("x must be >= 0")
    if x == 0:
        return 1.0
    lx = math.log(x)
    terms = [i * lx - math.lgamma(i + 1) for i in range(k)]
    top = max(terms)
    return math.exp(top - x + math.log(math.fsum(math.exp(v - top) for v in terms)))


def log_partial_exp_sum(k: int, x: float) -> float:
    """``log sum_{i<k} x^i / i!``."""
    if x <= 0:
        return 0.0
    lx = math.log(x)
    terms = [i * lx - math.lgamma(i + 1) for i in range(k)]
    top = max(terms)
    return top + math.log(math.fsum(math.exp(v - top) for v in terms))


def erlang_identity_sides(n: float, j: int) -> tuple[float, float]:
    """Both sides of ``n int_n^inf y^-2 (log y)^{j-1}/(j-1)! dy = sum_{i<j} (log n)^i/i!``.

    The left side is evaluated by adaptive quadrature after the substitution
    ``y = n e^s``, which turns it into ``int_0^inf e^{-s} (L + s)^{j-1}/(j-1)! ds``
    with ``L = log n`` and keeps the integrand well scaled for large ``n``;
    the right side is evaluated in closed form.
    """
    if n <= 1 or j < 1:
        raise DomainError("need n > 1 and j >= 1")
    L = math.log(n)
    lg = math.lgamma(j)

    def f(s):
        return math.exp((j - 1) * math.log(L + s) - s - lg)

    lhs, _ = integrate.quad(f, 0.0, np.inf, epsabs=1e-13, epsrel=1e-13, limit=500)
    return lhs, math.exp(log_partial_exp_sum(j, L))
