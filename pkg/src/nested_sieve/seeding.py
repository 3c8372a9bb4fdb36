"""Seed splitting and chunked replica fan-out.

Splitting rule: the stream for chunk ``k`` of an experiment seeded with
``master_seed`` is ``SeedSequence(master_seed, spawn_key=(k,))``. This is what
``SeedSequence(master_seed).spawn(k + 1)[k]`` produces, so chunk streams are
independent of how many workers consume them.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

from .errors import ConfigError

T = TypeVar("T")

THREADS_ENV = "NESTED_SIEVE_THREADS"
MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ConfigError(f"seed must be in [0, 2**64 - 1], got {seed}")
    return seed


def chunk_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(check_seed(master_seed), spawn_key=(int(index),))


def chunk_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(chunk_seed(master_seed, index))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an integer seed, or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return np.random.default_rng(check_seed(rng))


def split_replicas(replicas: int, chunk: int) -> list[int]:
    """Sizes of consecutive chunks covering ``replicas`` items."""
    if replicas < 1:
        raise ConfigError("replica count must be positive")
    chunk = max(1, int(chunk))
    sizes = [chunk] * (replicas // chunk)
    if replicas % chunk:
        sizes.append(replicas % chunk)
    return sizes


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if value < 1:
            raise ConfigError(f"{THREADS_ENV} must be positive")
        return value
    return os.cpu_count() or 1


def fan_out(func: Callable[..., T], arg_list: Sequence[tuple], threads: int | None = None) -> list[T]:
    """Apply ``func`` to each argument tuple, in order.

    With more than one worker the calls go to a process pool; results are
    returned in submission order so aggregation stays deterministic.
    """
    threads = default_threads() if threads is None else int(threads)
    if threads <= 1 or len(arg_list) <= 1:
        return [func(*args) for args in arg_list]
    with ProcessPoolExecutor(max_workers=min(threads, len(arg_list))) as pool:
        futures = [pool.submit(func, *args) for args in arg_list]
        return [f.result() for f in futures]
