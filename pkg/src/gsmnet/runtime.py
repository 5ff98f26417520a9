"""Thread caps for the BLAS backend."""

from __future__ import annotations

import contextlib
import os

from threadpoolctl import threadpool_limits

THREADS_ENV = "GSM_THREADS"


def thread_limit(deterministic: bool = False):
    """Context manager capping BLAS worker threads.

    Deterministic runs use one thread; otherwise ``GSM_THREADS`` applies
    when set, and the library default when not.
    """
    if deterministic:
        return threadpool_limits(limits=1)
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return threadpool_limits(limits=n)
