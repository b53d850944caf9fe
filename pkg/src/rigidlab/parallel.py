"""Deterministic chunked evaluation.

Work over quadrature points is split into fixed-size chunks whose
boundaries do not depend on the thread count; partial results are reduced
in chunk order.  Results are therefore bitwise identical for any pool size.
"""
import os
from concurrent.futures import ThreadPoolExecutor

CHUNK = 65536

_threads = None


def default_threads() -> int:
    env = os.environ.get("RIGIDLAB_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def get_threads() -> int:
    return _threads if _threads is not None else default_threads()


def set_threads(n) -> None:
    """Set the pool size used by all evaluations (``None`` restores the default)."""
    global _threads
    _threads = None if n is None else max(1, int(n))


def chunk_slices(n, chunk=CHUNK):
    return [slice(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def map_chunks(fn, n, threads=None):
    """Apply ``fn(slice)`` to each fixed chunk of ``range(n)``; results in chunk order."""
    slices = chunk_slices(n)
    threads = get_threads() if threads is None else threads
    if threads <= 1 or len(slices) <= 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=min(threads, len(slices))) as pool:
        return list(pool.map(fn, slices))
