"""Ordered fan-out over a process pool."""

from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor

__all__ = ["default_workers", "map_ordered", "chunk"]


def default_workers(requested=None):
    """``PGD_LAB_WORKERS`` beats ``requested``, which beats the CPU count."""
    env = os.environ.get("PGD_LAB_WORKERS")
    if env:
        try:
            value = int(env)
        except ValueError:
            from .errors import ConfigurationError

            raise ConfigurationError(f"PGD_LAB_WORKERS must be an integer, got {env!r}") from None
        return max(1, value)
    if requested is not None:
        return max(1, int(requested))
    return max(1, os.cpu_count() or 1)


def chunk(items, size):
    items = list(items)
    return [items[i:i + size] for i in range(0, len(items), size)]


def map_ordered(fn, arg_tuples, workers=1):
    """``[fn(*args) for args in arg_tuples]``, optionally in worker processes.

    Results come back in input order, so any later reduction sees the same
    sequence regardless of ``workers``.
    """
    arg_tuples = list(arg_tuples)
    if workers <= 1 or len(arg_tuples) <= 1:
        return [fn(*args) for args in arg_tuples]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=min(workers, len(arg_tuples)), mp_context=ctx) as pool:
        futures = [pool.submit(fn, *args) for args in arg_tuples]
        return [f.result() for f in futures]
