"""Gaussian limit objects.

Two covariance families are supported:

* fixed generations ``(N_1, ..., N_l)`` with ``E N_i N_j = 1 / (i + j - 1)``,
* the process ``R(u) = int_0^inf e^{-uy} dB(y)`` with ``E R(u) R(v) = 1 / (u + v)``.

Both are Cauchy matrices ``1/(x_i + y_j)``, positive definite for distinct
nodes. Samples come from a Cholesky factor of the covariance, which is exact
in distribution. A pathwise Brownian construction is kept as an independent
oracle only.

With ``referee=True`` the intermediate family uses ``u^{1/2} R(u)``, whose
covariance is ``sqrt(uv) / (u + v)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, DomainError, FactorizationError
from .seeding import as_generator


@dataclass(frozen=True)
class FixedGen:
    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx or any(i < 1 for i in idx):
            raise ConfigError("generation indices must be positive integers")
        object.__setattr__(self, "indices", idx)

    @property
    def nodes(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=float)

    def matrix(self, a: np.ndarray) -> np.ndarray:
        return 1.0 / (a[:, None] + a[None, :] - 1.0)

    def to_json(self):
        return {"kind": "fixed_gen", "indices": list(self.indices)}


@dataclass(frozen=True)
class Intermediate:
    points: tuple
    referee: bool = False

    def __post_init__(self):
        pts = tuple(float(u) for u in self.points)
        if not pts:
            raise ConfigError("at least one evaluation point is required")
        for u in pts:
            if not (u > 0 and math.isfinite(u)):
                # R cannot be continued to u = 0
                raise DomainError(f"evaluation points must be positive, got {u}")
        object.__setattr__(self, "points", pts)

    @property
    def nodes(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def matrix(self, a: np.ndarray) -> np.ndarray:
        cov = 1.0 / (a[:, None] + a[None, :])
        if self.referee:
            s = np.sqrt(a)
            cov = cov * s[:, None] * s[None, :]
        return cov

    def to_json(self):
        return {"kind": "intermediate", "points": list(self.points), "referee": self.referee}


CovFamily = Union[FixedGen, Intermediate]


def cov_matrix(family: CovFamily) -> np.ndarray:
    a = family.nodes
    if np.unique(a).size != a.size:
        raise FactorizationError("duplicate evaluation points give a singular covariance matrix", condition=math.inf)
    return family.matrix(a)


def cholesky_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cond = float(np.linalg.cond(cov))
        raise FactorizationError(
            f"covariance factorization failed (condition number {cond:.3g})", condition=cond
        ) from None


def sample_limit_vector(family: CovFamily, rng, count: int) -> np.ndarray:
    """``count`` rows of the zero-mean Gaussian vector described by ``family``."""
    if count < 1:
        raise ConfigError("sample count must be positive")
    L = cholesky_factor(cov_matrix(family))
    z = as_generator(rng).standard_normal((count, L.shape[0]))
    return z @ L.T


def pathwise_weights(points, y_max: float, step: float) -> np.ndarray:
    """Weights ``c`` with ``u int_0^{y_max} e^{-uy} B(y) dy = sum_k dB_k c_k``.

    The integral is the trapezoid rule on the grid ``k * step``; swapping the
    order of summation turns ``B(y_i) = sum_{k<=i} dB_k`` into a reverse
    cumulative sum of the quadrature weights.
    """
    u = np.asarray(points, dtype=float)[None, :]
    nsteps = int(round(y_max / step))
    y = step * np.arange(1, nsteps + 1)[:, None]
    w = np.full((nsteps, 1), step)
    w[-1] = step / 2
    f = u * w * np.exp(-u * y)
    return np.cumsum(f[::-1], axis=0)[::-1]


def pathwise_samples(
    points,
    rng,
    count: int,
    step: float = 1e-3,
    y_max: Optional[float] = None,
    chunk: int = 500,
) -> np.ndarray:
    """``u int e^{-uy} B(y) dy`` on discretized Brownian paths (oracle sampler).

    The integral is truncated at ``y_max`` (default ``40 / min(points)``).
    """
    pts = np.asarray(points, dtype=float)
    if np.any(pts <= 0):
        raise DomainError("evaluation points must be positive")
    y_max = 40.0 / pts.min() if y_max is None else y_max
    c = pathwise_weights(pts, y_max, step).astype(np.float32)
    rng = as_generator(rng)
    out = np.empty((count, pts.size))
    sd = np.float32(math.sqrt(step))
    done = 0
    while done < count:
        k = min(chunk, count - done)
        db = rng.standard_normal((k, c.shape[0]), dtype=np.float32)
        out[done : done + k] = (db @ c) * sd
        done += k
    return out


def variance_se(samples: np.ndarray) -> np.ndarray:
    """Standard error of the sample variance, from the fourth central moment."""
    x = samples - samples.mean(axis=0)
    n = x.shape[0]
    m2 = (x**2).mean(axis=0)
    m4 = (x**4).mean(axis=0)
    return np.sqrt(np.maximum(m4 - m2**2, 0.0) / n)


def covariance_se(a: np.ndarray, b: np.ndarray) -> float:
    """Standard error of the sample covariance of two columns."""
    p = (a - a.mean()) * (b - b.mean())
    return float(p.std(ddof=1) / math.sqrt(p.size))


def samples_csv(samples: np.ndarray, family: CovFamily) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    label = "N" if isinstance(family, FixedGen) else "R"
    names = family.indices if isinstance(family, FixedGen) else family.points
    w.writerow([f"{label}({x:g})" for x in names])
    for row in samples:
        w.writerow([f"{v:.10g}" for v in row])
    return buf.getvalue()


def covariance_json(family: CovFamily) -> str:
    return json.dumps({"family": family.to_json(), "covariance": cov_matrix(family).tolist()}, sort_keys=True)
